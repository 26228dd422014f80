use std::collections::BTreeMap;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use clap::Parser;
use freqscale::codec_sim::{encode, RdSweep};
use freqscale::evalkit::{bd_rate, compare_lists, QualityAxis};
use freqscale::media_io::{encode_ppm, load_corpus, load_pnm, Corpus};
use freqscale::scaling::{
    assemble_list, read_list, single_matrix_list, Component, Mode, ScalingList, ScalingMatrix,
};
use freqscale::synth::synthetic_corpus;
use freqscale::taskloss::bridge::{serve, BridgeConfig, ExternalBridge};
use freqscale::taskloss::TaskLossProxy;
use freqscale::trainer::{train_with_observer, TrainConfig, TrainReport};
use freqscale::BLOCK_SIZES;

use crate::manifest::Manifest;
use crate::output::{create_dir, read_text, sibling, write_atomic};
use crate::{
    AxisArg, Cli, CliResult, Command, CompareArgs, EncodeArgs, EvaluateArgs, ExportArgs, ExportStyle, Failure,
    ReplayArgs, ServeProxyArgs, SweepArgs, SweepPreset, SynthArgs, TrainArgs, TrainOptions,
};

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Encode(a) => encode_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::Export(a) => export(a),
        Command::Synth(a) => synth(a),
        Command::ServeProxy(a) => serve_proxy(a),
        Command::Replay(a) => replay(a),
    }
}

fn parse_list<T: FromStr>(text: &str, flag: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|item| {
            item.trim()
                .parse()
                .map_err(|_| Failure::usage(format!("--{flag}: cannot parse {item:?}")))
        })
        .collect()
}

fn parse_patch(text: &str) -> CliResult<(usize, usize)> {
    let bad = || Failure::usage(format!("--patch: expected N or HxW, got {text:?}"));
    match text.split_once('x') {
        Some((h, w)) => Ok((h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?)),
        None => {
            let n = text.parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

fn build_proxy(name: &str, bridge_cmd: Option<&str>, timeout_secs: f64) -> CliResult<TaskLossProxy> {
    match (name, bridge_cmd) {
        ("external", Some(cmd)) => {
            let command: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if command.is_empty() {
                return Err(Failure::usage("--bridge-cmd is empty"));
            }
            if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
                return Err(Failure::usage("--bridge-timeout must be positive"));
            }
            let mut config = BridgeConfig::new(command);
            config.timeout = Duration::from_secs_f64(timeout_secs);
            Ok(TaskLossProxy::External(ExternalBridge::spawn(config)?))
        }
        ("external", None) => Err(Failure::usage("--proxy external needs --bridge-cmd")),
        (_, Some(_)) => Err(Failure::usage("--bridge-cmd only applies to --proxy external")),
        (name, None) => Ok(TaskLossProxy::builtin(name)?),
    }
}

fn builtin_proxy(name: &str) -> CliResult<TaskLossProxy> {
    if name == "external" {
        return Err(Failure::usage("this subcommand only supports built-in proxies"));
    }
    Ok(TaskLossProxy::builtin(name)?)
}

fn train_config(opts: &TrainOptions, c: f64, lambda: f64, proxy: TaskLossProxy) -> CliResult<TrainConfig> {
    let (patch_h, patch_w) = parse_patch(&opts.patch)?;
    let mut cfg = TrainConfig::new(opts.block_size, c, lambda);
    cfg.epochs = opts.epochs;
    cfg.batch_size = opts.batch;
    cfg.seed = opts.seed;
    cfg.patch_h = patch_h;
    cfg.patch_w = patch_w;
    cfg.lr_initial = opts.lr;
    cfg.lr_after_half = opts.lr_after_half;
    cfg.proxy = proxy;
    cfg.validate()?;
    Ok(cfg)
}

fn options_manifest(sub: &str, opts: &TrainOptions) -> CliResult<Manifest> {
    let (h, w) = parse_patch(&opts.patch)?;
    Ok(Manifest::new(sub, Some(opts.seed))
        .arg("corpus", opts.corpus.display())
        .arg("block-size", opts.block_size)
        .arg("epochs", opts.epochs)
        .arg("batch", opts.batch)
        .arg("seed", opts.seed)
        .arg("proxy", &opts.proxy)
        .opt_arg("bridge-cmd", opts.bridge_cmd.as_ref())
        .arg("bridge-timeout", opts.bridge_timeout)
        .arg("patch", format!("{h}x{w}"))
        .arg("lr", opts.lr)
        .arg("lr-after-half", opts.lr_after_half))
}

fn run_training(corpus: &Corpus, cfg: &TrainConfig, label: &str) -> CliResult<TrainReport> {
    let report = train_with_observer(corpus, cfg, |e| {
        eprintln!(
            "{label}epoch {}/{}: task_loss={:.6} rate_loss={:.6} mean_S={:.4}",
            e.epoch + 1,
            cfg.epochs,
            e.task_loss,
            e.rate_loss,
            e.mean_s
        );
    })?;
    Ok(report)
}

fn train(a: TrainArgs) -> CliResult<()> {
    let proxy = build_proxy(&a.opts.proxy, a.opts.bridge_cmd.as_deref(), a.opts.bridge_timeout)?;
    let cfg = train_config(&a.opts, a.c, a.lambda, proxy)?;
    let manifest = options_manifest("train", &a.opts)?
        .arg("c", a.c)
        .arg("lambda", a.lambda)
        .arg("out", a.out.display());
    let corpus = load_corpus(&a.opts.corpus)?;
    let report = run_training(&corpus, &cfg, "")?;

    let list = single_matrix_list(&report.rounded_matrix)?;
    write_atomic(&a.out, list.to_text().as_bytes())?;
    write_atomic(&sibling(&a.out, ".telemetry.csv"), report.to_csv().as_bytes())?;
    manifest.write(&sibling(&a.out, ".manifest"))?;
    println!(
        "wrote {} (mean_S={:.4}, low-quadrant={:.4}, high-quadrant={:.4})",
        a.out.display(),
        report.final_mean_s(),
        report.final_matrix.low_quadrant_mean(),
        report.final_matrix.high_quadrant_mean()
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let (cs, lambdas): (Vec<f64>, Vec<f64>) = match a.preset {
        Some(SweepPreset::Grid3x4) => (vec![4.0, 16.0, 64.0], vec![0.01, 0.1, 1.0, 10.0]),
        None => (
            parse_list(a.c.as_deref().unwrap_or_default(), "c")?,
            parse_list(a.lambda.as_deref().unwrap_or_default(), "lambda")?,
        ),
    };
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let manifest = options_manifest("sweep", &a.opts)?
        .arg("c", join(&cs))
        .arg("lambda", join(&lambdas))
        .arg("out-dir", a.out_dir.display());

    // validate every cell before spending time on any of them; one proxy
    // (and bridge process) serves all cells
    let proxy = build_proxy(&a.opts.proxy, a.opts.bridge_cmd.as_deref(), a.opts.bridge_timeout)?;
    let mut cells = Vec::new();
    for &c in &cs {
        for &lambda in &lambdas {
            cells.push((c, lambda, train_config(&a.opts, c, lambda, proxy.clone())?));
        }
    }
    let corpus = load_corpus(&a.opts.corpus)?;
    create_dir(&a.out_dir)?;
    manifest.write(&a.out_dir.join("sweep.manifest"))?;

    let mut summary = String::from("c,lambda,mean_S,low_quadrant_mean,high_quadrant_mean,list_file\n");
    for (c, lambda, cfg) in &cells {
        let tag = format!("c{c}_lambda{lambda}");
        let report = run_training(&corpus, cfg, &format!("[{tag}] "))?;
        let list_name = format!("list_{tag}.txt");
        let list = single_matrix_list(&report.rounded_matrix)?;
        write_atomic(&a.out_dir.join(&list_name), list.to_text().as_bytes())?;
        write_atomic(&a.out_dir.join(format!("heat_{tag}.csv")), report.heat_csv().as_bytes())?;
        write_atomic(&a.out_dir.join(format!("telemetry_{tag}.csv")), report.to_csv().as_bytes())?;
        let m = &report.final_matrix;
        summary.push_str(&format!(
            "{c},{lambda},{},{},{},{list_name}\n",
            m.mean(),
            m.low_quadrant_mean(),
            m.high_quadrant_mean()
        ));
        println!("{tag}: mean_S={:.4}", m.mean());
    }
    write_atomic(&a.out_dir.join("summary.csv"), summary.as_bytes())
}

fn encode_cmd(a: EncodeArgs) -> CliResult<()> {
    let proxy = builtin_proxy(&a.proxy)?;
    let list = read_list(&a.list)?;
    let img = load_pnm(&a.input)?;
    let r = encode(&img, a.qp, &list, a.block_size, &proxy)?;
    println!(
        "bits={}\nbpp={}\npsnr_db={}\ntask_quality_db={}",
        r.bits,
        r.bits_per_pixel(),
        r.psnr,
        r.task_quality
    );
    if let Some(out) = &a.out {
        write_atomic(out, &encode_ppm(&r.reconstruction.quantized_to_bytes())?)?;
        Manifest::new("encode", None)
            .arg("input", a.input.display())
            .arg("list", a.list.display())
            .arg("qp", a.qp)
            .arg("block-size", a.block_size)
            .arg("proxy", &a.proxy)
            .arg("out", out.display())
            .write(&sibling(out, ".manifest"))?;
    }
    Ok(())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

fn parse_named_files(text: &str, flag: &str) -> CliResult<Vec<(String, PathBuf)>> {
    text.split(',')
        .map(|item| {
            let (name, file) = item
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("--{flag}: expected name=FILE, got {item:?}")))?;
            let name = name.trim();
            if !valid_name(name) {
                return Err(Failure::usage(format!(
                    "--{flag}: names may only use letters, digits, '-', '_' and '.', got {name:?}"
                )));
            }
            Ok((name.to_string(), PathBuf::from(file.trim())))
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let qps: Vec<i32> = parse_list(&a.qps, "qps")?;
    if qps.len() < 4 {
        return Err(Failure::usage(format!("--qps: BD-rate needs at least 4 QPs, got {}", qps.len())));
    }
    let proxy = builtin_proxy(&a.proxy)?;
    let named = parse_named_files(&a.lists, "lists")?;
    if !named.iter().any(|(n, _)| *n == a.anchor) {
        return Err(Failure::usage(format!("--anchor {:?} is not one of the --lists names", a.anchor)));
    }
    let lists = named
        .iter()
        .map(|(n, f)| Ok((n.clone(), read_list(f)?)))
        .collect::<CliResult<Vec<(String, ScalingList)>>>()?;
    let corpus = load_corpus(&a.corpus)?;
    let report = compare_lists(&corpus, &qps, &lists, a.block_size, &proxy, &a.anchor)?;

    create_dir(&a.out_dir)?;
    for (name, sweep) in &report.sweeps {
        write_atomic(&a.out_dir.join(format!("rd_{name}.csv")), sweep.to_csv().as_bytes())?;
    }
    write_atomic(&a.out_dir.join("bd_report.csv"), report.to_csv().as_bytes())?;
    Manifest::new("evaluate", None)
        .arg("corpus", a.corpus.display())
        .arg("qps", qps.iter().map(i32::to_string).collect::<Vec<_>>().join(","))
        .arg(
            "lists",
            named
                .iter()
                .map(|(n, f)| format!("{n}={}", f.display()))
                .collect::<Vec<_>>()
                .join(","),
        )
        .arg("anchor", &a.anchor)
        .arg("proxy", &a.proxy)
        .arg("block-size", a.block_size)
        .arg("out-dir", a.out_dir.display())
        .write(&a.out_dir.join("evaluate.manifest"))?;
    print!("{}", report.to_table());
    Ok(())
}

fn compare(a: CompareArgs) -> CliResult<()> {
    let test = RdSweep::parse_csv(&read_text(&a.test)?)?;
    let anchor = RdSweep::parse_csv(&read_text(&a.anchor)?)?;
    let axes: &[QualityAxis] = match a.axis {
        AxisArg::Psnr => &[QualityAxis::Psnr],
        AxisArg::TaskQuality => &[QualityAxis::TaskQuality],
        AxisArg::Both => &QualityAxis::ALL,
    };
    println!("axis,bd_rate_percent");
    for &axis in axes {
        println!("{axis},{}", bd_rate(&test.curve(axis)?, &anchor.curve(axis)?)?);
    }
    Ok(())
}

fn export(a: ExportArgs) -> CliResult<()> {
    let mut per_size: BTreeMap<usize, ScalingMatrix> = BTreeMap::new();
    let mut sources = Vec::new();
    for (key, file) in parse_named_files(&a.matrices, "matrices")? {
        let size: usize = key
            .strip_prefix("size")
            .and_then(|s| s.parse().ok())
            .filter(|s| BLOCK_SIZES.contains(s))
            .ok_or_else(|| Failure::usage(format!("--matrices: expected size<B> with B in {BLOCK_SIZES:?}, got {key:?}")))?;
        let list = read_list(&file)?;
        let m = list.resolve(size, Component::Y, Mode::Intra)?.clone();
        if per_size.insert(size, m).is_some() {
            return Err(Failure::usage(format!("--matrices: size{size} given twice")));
        }
        sources.push(format!("size{size}={}", file.display()));
    }
    let list = assemble_list(&per_size)?;
    let text = match a.style {
        ExportStyle::Native => list.to_text(),
        ExportStyle::Vtm => list.to_vtm_text(),
    };
    write_atomic(&a.out, text.as_bytes())?;
    Manifest::new("export", None)
        .arg("matrices", sources.join(","))
        .arg("out", a.out.display())
        .arg("style", if a.style == ExportStyle::Native { "native" } else { "vtm" })
        .write(&sibling(&a.out, ".manifest"))?;
    println!("wrote {} ({} entries)", a.out.display(), list.len());
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult<()> {
    if a.count == 0 || a.size == 0 {
        return Err(Failure::usage("--count and --size must be positive"));
    }
    let corpus = synthetic_corpus(a.count, a.size, a.size, a.seed)?;
    create_dir(&a.out_dir)?;
    for (name, img) in corpus.entries() {
        write_atomic(&a.out_dir.join(format!("{name}.ppm")), &encode_ppm(img)?)?;
    }
    println!("wrote {} images to {}", corpus.len(), a.out_dir.display());
    Ok(())
}

fn serve_proxy(a: ServeProxyArgs) -> CliResult<()> {
    let proxy = builtin_proxy(&a.proxy)?;
    let reference = load_pnm(&a.reference)?;
    let stdin = io::stdin();
    serve(stdin.lock(), BufWriter::new(io::stdout().lock()), &proxy, &reference)?;
    Ok(())
}

fn replay(a: ReplayArgs) -> CliResult<()> {
    let manifest = Manifest::read(&a.manifest)?;
    if manifest.subcommand == "replay" {
        return Err(Failure::usage("a manifest cannot replay another replay"));
    }
    let argv = std::iter::once("freqscale".to_string()).chain(manifest.argv());
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Failure::usage(format!("{}: {}", a.manifest.display(), e.render())))?;
    dispatch(cli.command)
}
