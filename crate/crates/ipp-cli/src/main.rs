//! Command-line front end for the informative path planning simulator.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 internal
//! invariant violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ipp_core::grid::GridCoord;
use ipp_core::harness::{
    self, calibrate_from_database, parse_config, parse_synthetic_spec, render_heatmap,
    render_path_overlay, trace_to_csv, FailureKind, HarnessError,
};
use ipp_core::learner::{map_subpatch_features, mean_iou};
use ipp_core::novelty::{novelty_grid, read_database_dump};
use ipp_core::planner::{run_ipp_mission, PlannerParams};
use ipp_core::terrain::{generate_synthetic_map, load_map_bundle, save_map_bundle};
use ipp_core::Grid;

#[derive(Parser)]
#[command(
    name = "ipp",
    about = "Novelty-driven informative path planning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic map bundle from a spec file and seed.
    GenMap(GenMapArgs),
    /// Run a multi-mission experiment from a config file.
    Run(RunArgs),
    /// Plan and simulate a single novelty-seeking mission against a
    /// database dump.
    Plan(PlanArgs),
    /// Render the whole-map novelty heatmap against a database dump.
    Novelty(NoveltyArgs),
    /// Evaluate a prediction PGM against a map bundle in mIoU.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenMapArgs {
    /// Synthetic map spec file.
    #[arg(long)]
    spec: PathBuf,
    /// Generation seed.
    #[arg(long)]
    seed: u64,
    /// Bundle directory to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out=` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Map bundle directory.
    #[arg(long)]
    map: PathBuf,
    /// Embedding database dump (.nippdb).
    #[arg(long)]
    db: PathBuf,
    /// Start (home) cell as <row>,<col>.
    #[arg(long, value_parser = parse_cell)]
    start: GridCoord,
    /// Energy budget in moves.
    #[arg(long)]
    budget: usize,
    /// Nearest neighbors per novelty query.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Directory for the path trace and overlay.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoveltyArgs {
    /// Map bundle directory.
    #[arg(long)]
    map: PathBuf,
    /// Embedding database dump (.nippdb).
    #[arg(long)]
    db: PathBuf,
    /// Output PGM path.
    #[arg(long)]
    out: PathBuf,
    /// Nearest neighbors per novelty query.
    #[arg(long, default_value_t = 20)]
    k: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction PGM at 16 px subpatch granularity.
    #[arg(long)]
    pred: PathBuf,
    /// Map bundle directory with the ground truth.
    #[arg(long)]
    map: PathBuf,
}

fn parse_cell(text: &str) -> Result<GridCoord, String> {
    let (row, col) = text
        .split_once(',')
        .ok_or_else(|| format!("expected <row>,<col>, got {text:?}"))?;
    Ok(GridCoord::new(
        row.trim().parse().map_err(|_| format!("bad row {row:?}"))?,
        col.trim().parse().map_err(|_| format!("bad col {col:?}"))?,
    ))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.kind() {
                FailureKind::Config => 1,
                FailureKind::Io => 2,
                FailureKind::Internal => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn read_text(path: &PathBuf) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })
}

fn write_bytes(path: &PathBuf, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenMap(args) => {
            let spec = parse_synthetic_spec(&read_text(&args.spec)?)?;
            let map = generate_synthetic_map(&spec, args.seed)?;
            save_map_bundle(&map, &args.out)?;
            println!(
                "wrote {}x{} px bundle ({}x{} cells, {} classes) to {}",
                map.width_px(),
                map.height_px(),
                map.grid_dims().rows,
                map.grid_dims().cols,
                map.class_table().len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Run(args) => {
            let mut config = parse_config(&read_text(&args.config)?)?;
            if let Some(out) = args.out {
                config.out_dir = Some(out);
            }
            let result = harness::run_experiment(&config)?;
            for row in &result.rows {
                println!(
                    "mission {:2} [{}] pool_cells={} miou={:.6} high_novelty_cells={}",
                    row.mission, row.planner, row.pool_cells, row.miou, row.high_novelty_cells
                );
            }
            if let Some(dir) = &config.out_dir {
                println!("artifacts in {}", dir.display());
            }
            Ok(())
        }
        Command::Plan(args) => {
            let map = load_map_bundle(&args.map)?;
            let db = read_database_dump(&args.db)?;
            let thresholds = calibrate_from_database(&db, args.k)?;
            let record = run_ipp_mission(
                &map,
                &db,
                args.start,
                args.budget,
                thresholds,
                PlannerParams::default(),
                args.k,
            )?;
            println!(
                "mission: {} moves, {} observed cells, thresholds alpha={:.6} beta={:.6}",
                record.moves_used(),
                record.observed.len(),
                thresholds.alpha,
                thresholds.beta
            );
            if let Some(dir) = &args.out {
                write_bytes(&dir.join("trace.csv"), trace_to_csv(&record).as_bytes())?;
                write_bytes(
                    &dir.join("overlay.ppm"),
                    &render_path_overlay(&map, &record.trajectory, record.home),
                )?;
                println!("artifacts in {}", dir.display());
            }
            Ok(())
        }
        Command::Novelty(args) => {
            let map = load_map_bundle(&args.map)?;
            let db = read_database_dump(&args.db)?;
            let features = map_subpatch_features(&map)?;
            let grid = novelty_grid(&db, &features, args.k)?;
            write_bytes(&args.out, &render_heatmap(&grid, 0.0, 2.0))?;
            println!("wrote novelty heatmap to {}", args.out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let map = load_map_bundle(&args.map)?;
            let bytes = std::fs::read(&args.pred).map_err(|source| HarnessError::Io {
                path: args.pred.clone(),
                source,
            })?;
            let image =
                ipp_core::pnm::decode_p5(&bytes).map_err(|e| ipp_core::terrain::MapError::Pnm {
                    file: "prediction",
                    source: e,
                })?;
            let pred = Grid::from_vec(
                ipp_core::GridDims::new(image.height, image.width),
                image.data,
            );
            let result = mean_iou(&pred, &map)?;
            for class in &result.per_class {
                match class.iou {
                    Some(v) => println!("iou_{} {:.6}", class.class_id, v),
                    None => println!("iou_{} nan", class.class_id),
                }
            }
            println!("miou {:.6}", result.mean);
            Ok(())
        }
    }
}
