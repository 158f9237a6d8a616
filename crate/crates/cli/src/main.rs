use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use relcka::harness::{make_blobs, run_seed_sweep, train_teacher, BlobConfig, Mode, TrainConfig};
use relcka::io::{export_csv, format_value, read_dump, read_dump_with, Tensor};
use relcka::losses::{pcka_loss, PatchConfig};
use relcka::verify::{self, Fault};
use relcka::{cka, layer_cka_matrix, mmd_decomposition, CkaConfig, LossWeights, Matrix};

#[derive(Parser, Debug)]
#[command(
    name = "relcka",
    version,
    about = "CKA similarity, relation losses and a toy distillation sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the CKA identities, invariances and gradients on random instances.
    Verify(VerifyArgs),
    /// CKA and its pairwise decomposition between two dumps.
    Similarity(SimilarityArgs),
    /// Layer-by-layer CKA between two directories of dumps, written as CSV.
    Heatmap(HeatmapArgs),
    /// Train a teacher, then sweep students over seeds and modes.
    Distill(DistillArgs),
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Format {
    #[default]
    Pretty,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InjectFault {
    NegateNumerator,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Pretty)]
    format: Format,
    /// Corrupt the CKA under test to exercise the failure path.
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<InjectFault>,
}

#[derive(Args, Debug)]
struct SimilarityArgs {
    dump_a: PathBuf,
    dump_b: PathBuf,
    /// Flatten 4-D (B, C, H, W) dumps to B x CHW before comparing.
    #[arg(long)]
    flatten: bool,
    /// Patch size `PH,PW`; on 4-D dumps also reports the patch-wise loss.
    #[arg(long, value_parser = parse_patch)]
    patch: Option<(usize, usize)>,
    /// Scale of the patch-wise loss.
    #[arg(long, default_value_t = 10.0)]
    gamma: f64,
    #[arg(long)]
    no_center: bool,
    #[arg(long)]
    allow_nonfinite: bool,
    #[arg(long, value_enum, default_value_t = Format::Pretty)]
    format: Format,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    dir_a: PathBuf,
    dir_b: PathBuf,
    out: PathBuf,
    #[arg(long)]
    no_center: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ce,
    Kd,
    Rcka,
    All,
}

#[derive(Args, Debug)]
struct DistillArgs {
    /// Repeatable. Defaults to all modes.
    #[arg(long, value_enum)]
    mode: Vec<ModeArg>,
    /// Number of student seeds; seeds run from 1 to N.
    #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long, default_value_t = 5.0)]
    alpha: f64,
    #[arg(long, default_value_t = 5.0)]
    beta: f64,
    #[arg(long, default_value_t = 10.0)]
    gamma: f64,
    #[arg(long, default_value_t = 4.0)]
    tau: f64,
    /// Student epochs.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, default_value_t = 0)]
    teacher_seed: u64,
    #[arg(long)]
    no_center: bool,
    #[arg(long, default_value = "distill_out")]
    out: PathBuf,
}

fn parse_patch(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(',')
        .ok_or_else(|| format!("expected PH,PW, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad patch size {v:?}: {e}"))
    };
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err("patch sizes must be >= 1".into());
    }
    Ok((h, w))
}

fn cka_config(no_center: bool) -> CkaConfig {
    if no_center {
        CkaConfig::uncentered()
    } else {
        CkaConfig::default()
    }
}

fn render(fields: &[(String, String)], format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Pretty => {
            let width = fields.iter().map(|f| f.0.len()).max().unwrap_or(0);
            for (k, v) in fields {
                let _ = writeln!(out, "{k:<width$}  {v}");
            }
        }
        Format::Csv => {
            out.push_str("name,value\n");
            for (k, v) in fields {
                let _ = writeln!(out, "\"{}\",{v}", k.replace('"', "\"\""));
            }
        }
    }
    out
}

/// Returns `Ok(false)` when a property failed.
fn cmd_verify(args: &VerifyArgs) -> anyhow::Result<bool> {
    let fault = match args.inject_fault {
        Some(InjectFault::NegateNumerator) => Fault::NegateNumerator,
        None => Fault::None,
    };
    let report = verify::run(args.trials as usize, args.seed, fault)?;
    let fields: Vec<(String, String)> = report
        .checks
        .iter()
        .map(|c| {
            let status = match (c.gating, c.passed()) {
                (false, _) => "info",
                (true, true) => "ok",
                (true, false) => "FAIL",
            };
            (
                c.name.to_string(),
                format!(
                    "{status} max_deviation={:.3e} tolerance={:.0e}",
                    c.max_deviation, c.tolerance
                ),
            )
        })
        .collect();
    print!("{}", render(&fields, args.format));
    match report.first_failure() {
        Some(c) => {
            eprintln!("first failing property: {}", c.name);
            Ok(false)
        }
        None => {
            println!(
                "all properties hold over {} trials (seed {})",
                report.trials, report.seed
            );
            Ok(true)
        }
    }
}

fn load(path: &Path, allow_nonfinite: bool) -> anyhow::Result<Tensor> {
    Ok(read_dump_with(path, allow_nonfinite)?)
}

fn as_samples(t: &Tensor, path: &Path, flatten: bool) -> anyhow::Result<Matrix> {
    match t.ndim() {
        2 => Ok(t.to_matrix()?),
        4 if flatten => Ok(t.to_sample_matrix()?),
        4 => bail!(
            "{} is 4-D {:?}; pass --flatten to compare it as B x CHW",
            path.display(),
            t.dims
        ),
        n => bail!(
            "{} has {n} dimensions; similarity needs 2-D or 4-D dumps",
            path.display()
        ),
    }
}

fn cmd_similarity(args: &SimilarityArgs) -> anyhow::Result<()> {
    let cfg = cka_config(args.no_center);
    let a = load(&args.dump_a, args.allow_nonfinite)?;
    let b = load(&args.dump_b, args.allow_nonfinite)?;
    let both_4d = a.ndim() == 4 && b.ndim() == 4;
    let mut fields = Vec::new();

    if !(both_4d && args.patch.is_some() && !args.flatten) {
        let x = as_samples(&a, &args.dump_a, args.flatten)?;
        let y = as_samples(&b, &args.dump_b, args.flatten)?;
        if x.rows() != y.rows() {
            bail!(
                "dimension mismatch: {} has {} samples but {} has {}",
                args.dump_a.display(),
                x.rows(),
                args.dump_b.display(),
                y.rows()
            );
        }
        let s = cka(&x, &y, &cfg)?;
        let d = mmd_decomposition(&x, &y, &cfg)?;
        fields.push(("cka".to_string(), format_value(s)));
        fields.push(("pairwise_term".to_string(), format_value(d.pairwise_term)));
        fields.push(("jensen_bound".to_string(), format_value(d.jensen_bound)));
        fields.push(("n".to_string(), d.n.to_string()));
    }
    if let Some((ph, pw)) = args.patch {
        if !both_4d {
            bail!(
                "--patch needs two 4-D dumps, got {:?} and {:?}",
                a.dims,
                b.dims
            );
        }
        if !(args.gamma >= 0.0 && args.gamma.is_finite()) {
            bail!("--gamma must be a finite value >= 0, got {}", args.gamma);
        }
        let pc = PatchConfig::new(ph, pw)?;
        let r = pcka_loss(
            &a.to_feature_map()?,
            &b.to_feature_map()?,
            &pc,
            args.gamma,
            &cfg,
        )?;
        fields.push(("pcka".to_string(), format_value(r.report.value)));
        if !r.skipped.is_empty() {
            fields.push(("pcka_skipped".to_string(), format!("{:?}", r.skipped)));
        }
    }
    print!("{}", render(&fields, args.format));
    Ok(())
}

/// Dumps in `dir` sorted by file name, with their stems as labels.
fn layer_files(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in
        fs::read_dir(dir).with_context(|| format!("cannot read directory {}", dir.display()))?
    {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "fdmp") {
            let label = path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            files.push((label, path));
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no .fdmp files in {}", dir.display());
    }
    Ok(files)
}

fn cmd_heatmap(args: &HeatmapArgs) -> anyhow::Result<()> {
    let a = layer_files(&args.dir_a)?;
    let b = layer_files(&args.dir_b)?;
    let mut errors = Vec::new();
    let mut read_all = |files: &[(String, PathBuf)]| -> Vec<Matrix> {
        files
            .iter()
            .filter_map(|(_, p)| {
                match read_dump(p).map_err(anyhow::Error::from).and_then(|t| {
                    if t.ndim() == 2 || t.ndim() == 4 {
                        Ok(t.to_sample_matrix()?)
                    } else {
                        bail!("{} dimensions, expected 2 or 4", t.ndim())
                    }
                }) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        errors.push(format!("{}: {e}", p.display()));
                        None
                    }
                }
            })
            .collect()
    };
    let xs = read_all(&a);
    let ys = read_all(&b);
    if !errors.is_empty() {
        bail!(
            "{} unreadable layer file(s), nothing written:\n  {}",
            errors.len(),
            errors.join("\n  ")
        );
    }
    let m = layer_cka_matrix(&xs, &ys, &cka_config(args.no_center)).map_err(|e| match e {
        relcka::Error::Layer { row, col, source } => {
            anyhow::anyhow!("{} vs {}: {source}", a[row].1.display(), b[col].1.display())
        }
        other => other.into(),
    })?;
    let rows: Vec<String> = a.into_iter().map(|f| f.0).collect();
    let cols: Vec<String> = b.into_iter().map(|f| f.0).collect();
    export_csv(&m, &args.out, &rows, &cols)?;
    println!(
        "wrote {}x{} CKA matrix to {}",
        m.rows(),
        m.cols(),
        args.out.display()
    );
    Ok(())
}

fn selected_modes(requested: &[ModeArg]) -> Vec<Mode> {
    if requested.is_empty() || requested.contains(&ModeArg::All) {
        return Mode::ALL.to_vec();
    }
    let mut modes: Vec<Mode> = requested
        .iter()
        .map(|m| match m {
            ModeArg::Ce => Mode::Ce,
            ModeArg::Kd => Mode::Kd,
            ModeArg::Rcka | ModeArg::All => Mode::Rcka,
        })
        .collect();
    modes.sort();
    modes.dedup();
    modes
}

/// Returns `Ok(false)` when any run failed.
fn cmd_distill(args: &DistillArgs) -> anyhow::Result<bool> {
    let weights = LossWeights {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        tau: args.tau,
    };
    let base = TrainConfig {
        weights,
        cka_cfg: cka_config(args.no_center),
        epochs: args.epochs as usize,
        ..TrainConfig::student(Mode::Ce, 0)
    };
    base.validate()?;
    let modes = selected_modes(&args.mode);
    let seeds: Vec<u64> = (1..=args.seeds).collect();

    let data = make_blobs(&BlobConfig {
        seed: args.data_seed,
        ..BlobConfig::default()
    })?;
    let teacher = train_teacher(&data, &TrainConfig::teacher(args.teacher_seed))?;
    let teacher_acc = teacher.accuracy(&data.test_x, &data.test_y)?;
    println!("teacher test accuracy {teacher_acc:.4}");

    let sweep = run_seed_sweep(&teacher, &data, &base, &modes, &seeds)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let save = |name: String, buf: Vec<u8>| -> anyhow::Result<()> {
        let path = args.out.join(name);
        fs::write(&path, buf).with_context(|| format!("cannot write {}", path.display()))
    };
    let mut ok = true;
    for run in &sweep.runs {
        match &run.result {
            Ok(report) => {
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                save(format!("{}_seed{}.csv", run.mode, run.seed), buf)?;
            }
            Err(e) => {
                ok = false;
                eprintln!("{} seed {}: {e}", run.mode, run.seed);
            }
        }
    }
    let mut buf = Vec::new();
    sweep.write_summary_csv(&mut buf)?;
    save("summary.csv".to_string(), buf)?;
    for m in &sweep.modes {
        println!(
            "{:<4} median accuracy {:.4} (min {:.4}, max {:.4}, {} runs, {} failed)",
            m.mode, m.median, m.min, m.max, m.runs, m.failures
        );
    }
    println!("wrote reports to {}", args.out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let outcome = match &cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Similarity(a) => cmd_similarity(a).map(|_| true),
        Command::Heatmap(a) => cmd_heatmap(a).map(|_| true),
        Command::Distill(a) => cmd_distill(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
