use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sfda_core::data::{dataset_hash, load_benchmark, load_dataset, save_dataset, DatasetManifest, Domain, Split};
use sfda_core::metrics::{evaluate, render_table, EvalReport};
use sfda_core::mixing::{build_pair, plan_intra, supervise_batch};
use sfda_core::model::{Checkpoint, SegModel};
use sfda_core::pipeline::{
    adapt_with_partition, history_csv, run_ablation_components, run_ablation_sigma, train_source, AblationTable, RunManifest,
};
use sfda_core::selection::{partition_target, Partition};

use crate::config::{BenchmarkDir, DataConfig};
use crate::{plot, AblateKind, Cli, CliError, Command, EvalArgs, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

/// Known checkpoints in the run directory with their report labels.
const RUN_CHECKPOINTS: [(&str, &str); 3] = [("Source only", "source.ckpt"), ("Target only", "target_only.ckpt"), ("Ours", "adapted.ckpt")];

struct Ctx {
    cfg: RunConfig,
    dry_run: bool,
}

impl Ctx {
    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.out_dir.join(rel)
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).unwrap_or(serde_json::Value::Null)
    }

    fn write(&self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    fn dataset(&self, role: &str) -> Result<DatasetManifest> {
        match &self.cfg.data {
            DataConfig::Synthetic(_) => {
                let (m, _) = load_dataset(&self.out(&format!("data/{role}")))?;
                Ok(m)
            }
            DataConfig::Benchmark(b) => {
                let (dir, split, require): (&BenchmarkDir, Split, bool) = match role {
                    "source" => (
                        b.source.as_ref().ok_or_else(|| CliError::Config("data.source is required to train a source model".into()))?,
                        Split::Train,
                        true,
                    ),
                    "target_train" => (&b.target_train, Split::Train, false),
                    _ => (&b.target_test, Split::Test, true),
                };
                let mut opts = self.cfg.load_options(split, require);
                opts.domain = if role == "source" { Domain::Source } else { Domain::Target };
                let loaded = load_benchmark(&dir.root, dir.layout, b.resolution, &opts)?;
                for w in &loaded.warnings {
                    log::warn!("{w}");
                }
                if loaded.skipped > 0 {
                    log::warn!("{}: skipped {} unreadable files", dir.root.display(), loaded.skipped);
                }
                Ok(loaded.manifest.with_name(role))
            }
        }
    }

    fn input_hash(&self, role: &str, manifest: &DatasetManifest) -> String {
        match &self.cfg.data {
            DataConfig::Synthetic(_) => dataset_hash(&self.out(&format!("data/{role}"))).unwrap_or_else(|_| manifest.content_hash()),
            DataConfig::Benchmark(_) => manifest.content_hash(),
        }
    }

    fn checkpoint(&self, path: &Path, hint: &str) -> Result<(Checkpoint, SegModel)> {
        if !path.exists() {
            return Err(CliError::Missing { path: path.to_path_buf(), hint: hint.into() });
        }
        let ckpt = Checkpoint::load(path)?;
        let model = ckpt.to_model()?;
        Ok((ckpt, model))
    }

    fn source_model(&self) -> Result<(Checkpoint, SegModel)> {
        self.checkpoint(&self.out("source.ckpt"), "run `sfda train-source` first")
    }

    fn plan(&self, what: &str, outputs: &[&str]) -> bool {
        if self.dry_run {
            println!("dry run: `{what}` would write:");
            for o in outputs {
                println!("  {}", self.out(o).display());
            }
        }
        self.dry_run
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.adapt.seed = seed;
        if let DataConfig::Synthetic(d) = &mut cfg.data {
            d.source_seed = seed;
            d.target_seed = seed.wrapping_add(1);
        }
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(sigma) = cli.sigma {
        cfg.adapt.sigma = sigma;
    }
    if cli.stage2_keep_intra {
        cfg.adapt.stage2_keep_intra = true;
    }
    if cli.no_lcc_filter {
        cfg.eval.lcc_filter = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    if cli.dry_run {
        let text = toml::to_string_pretty(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("# resolved configuration\n{text}");
    }
    let ctx = Ctx { cfg, dry_run: cli.dry_run };
    match &cli.command {
        Command::Synth => synth(&ctx),
        Command::TrainSource { target_only } => train(&ctx, *target_only),
        Command::Partition => partition(&ctx),
        Command::Adapt { variant } => adapt(&ctx, (*variant).into()),
        Command::Eval(args) => eval(&ctx, args),
        Command::Ablate { kind } => ablate(&ctx, kind),
        Command::Plot { reference } => plot_cmd(&ctx, reference),
        Command::Dump { count, checkpoint } => dump(&ctx, *count, checkpoint.as_deref()),
    }
}

fn synth(ctx: &Ctx) -> Result<()> {
    let DataConfig::Synthetic(bench) = &ctx.cfg.data else {
        return Err(CliError::Config("`synth` needs data.kind = \"synthetic\"".into()));
    };
    if ctx.plan("synth", &["data/source", "data/target_train", "data/target_test"]) {
        return Ok(());
    }
    let data = bench.build()?;
    let parts = [
        ("source", &data.source, (bench.source_shift.clone(), bench.source_seed)),
        ("target_train", &data.target_train, (bench.target_shift.clone(), bench.target_seed)),
        ("target_test", &data.target_test, (bench.target_shift.clone(), bench.target_seed)),
    ];
    for (role, manifest, provenance) in parts {
        let dir = ctx.out(&format!("data/{role}"));
        save_dataset(&dir, manifest, Some(provenance))?;
        println!("{role}: {} images -> {} (hash {})", manifest.len(), dir.display(), dataset_hash(&dir)?);
    }
    Ok(())
}

fn train(ctx: &Ctx, target_only: bool) -> Result<()> {
    let (role, name) = if target_only { ("target_train", "target_only") } else { ("source", "source") };
    let ckpt_rel = format!("{name}.ckpt");
    if ctx.plan("train-source", &[&ckpt_rel, &format!("{name}_history.csv"), &format!("{name}_run.json")]) {
        return Ok(());
    }
    let data = ctx.dataset(role)?;
    if !data.has_ground_truth() {
        return Err(CliError::Config(format!("{role} data has no masks; supervised training needs them")));
    }
    let start = Instant::now();
    let run = train_source(&data, ctx.cfg.net_config(), &ctx.cfg.adapt)?;
    let ckpt_path = ctx.out(&ckpt_rel);
    run.checkpoint.save(&ckpt_path)?;
    let mut csv = String::from("epoch,train_loss,holdout_dice\n");
    for e in &run.history {
        csv.push_str(&format!("{},{:.6},{}\n", e.epoch, e.train_loss, e.holdout_dice.map_or(String::new(), |d| format!("{d:.4}"))));
    }
    ctx.write(&ctx.out(&format!("{name}_history.csv")), csv)?;
    let mut manifest = RunManifest::new(&format!("train-source{}", if target_only { " --target-only" } else { "" }), ctx.config_json(), ctx.cfg.adapt.seed);
    manifest.inputs.insert(role.into(), ctx.input_hash(role, &data));
    manifest.checkpoints.insert(name.into(), ckpt_path.display().to_string());
    manifest.notes.push(format!("best epoch {} (initial loss {:.4})", run.best_epoch, run.initial_loss));
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.save(&ctx.out(&format!("{name}_run.json")))?;
    println!("{name}: best epoch {} -> {}", run.best_epoch, ckpt_path.display());
    Ok(())
}

fn partition(ctx: &Ctx) -> Result<()> {
    if ctx.plan("partition", &["partition.json"]) {
        return Ok(());
    }
    let (_, source) = ctx.source_model()?;
    let target = ctx.dataset("target_train")?;
    let p = partition_target(&target, &source, ctx.cfg.adapt.sigma, ctx.cfg.adapt.execution)?;
    p.save(&ctx.out("partition.json"))?;
    println!(
        "partition σ={}: {} reliable, {} unreliable ({} high-entropy, {} low-similarity)",
        p.sigma,
        p.reliable_ids.len(),
        p.unreliable_ids.len(),
        p.high_entropy_ids.len(),
        p.low_similarity_ids.len()
    );
    Ok(())
}

fn adapt(ctx: &Ctx, variant: sfda_core::pipeline::Variant) -> Result<()> {
    if ctx.plan("adapt", &["adapted.ckpt", "teacher.ckpt", "adapt_history.csv", "adapt_run.json"]) {
        return Ok(());
    }
    let (source_ckpt, source) = ctx.source_model()?;
    let target = ctx.dataset("target_train")?;
    let partition_path = ctx.out("partition.json");
    let partition = if variant == sfda_core::pipeline::Variant::Baseline || variant == sfda_core::pipeline::Variant::Dpm {
        None
    } else {
        match Partition::load(&partition_path) {
            Ok(p) => Some(p),
            Err(sfda_core::Error::MissingArtifact { path, .. }) => {
                return Err(CliError::Missing { path, hint: "run `sfda partition` first".into() })
            }
            Err(e) => return Err(e.into()),
        }
    };
    if let Some(p) = &partition {
        if (p.sigma - ctx.cfg.adapt.sigma).abs() > 1e-12 {
            return Err(CliError::Config(format!(
                "partition.json was computed at sigma {} but the run uses {}; re-run `sfda partition`",
                p.sigma, ctx.cfg.adapt.sigma
            )));
        }
    }
    let start = Instant::now();
    let run = adapt_with_partition(&source, &target, &ctx.cfg.adapt, variant, partition)?;
    let mut metrics = BTreeMap::new();
    if let Some(l) = run.history.last() {
        metrics.insert("final_loss".to_string(), l.mean_loss);
    }
    let epochs = ctx.cfg.adapt.stage_epochs.0 + ctx.cfg.adapt.stage_epochs.1;
    let student = Checkpoint::from_model(&run.student, ctx.config_json(), epochs, metrics.clone());
    let teacher = Checkpoint::from_model(&run.teacher, ctx.config_json(), epochs, metrics);
    student.save(&ctx.out("adapted.ckpt"))?;
    teacher.save(&ctx.out("teacher.ckpt"))?;
    ctx.write(&ctx.out("adapt_history.csv"), history_csv(&run.history))?;

    let mut manifest = RunManifest::new("adapt", ctx.config_json(), ctx.cfg.adapt.seed);
    manifest.inputs.insert("target_train".into(), ctx.input_hash("target_train", &target));
    manifest.inputs.insert("source_checkpoint".into(), source_ckpt.content_hash()?);
    manifest.partition = run.partition.as_ref().map(|_| partition_path.display().to_string());
    manifest.checkpoints.insert("student".into(), ctx.out("adapted.ckpt").display().to_string());
    manifest.checkpoints.insert("teacher".into(), ctx.out("teacher.ckpt").display().to_string());
    manifest.epoch_losses = run.history.clone();
    manifest.notes.push(format!("variant {:?}", variant));
    if run.stage2_fallback {
        manifest.notes.push("unreliable subset empty: stage 2 used intra-domain mixing over all target data".into());
    }
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.save(&ctx.out("adapt_run.json"))?;
    println!("adapted student -> {}", ctx.out("adapted.ckpt").display());
    Ok(())
}

fn slug(label: &str) -> String {
    label.to_ascii_lowercase().chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let targets: Vec<(String, PathBuf)> = match &args.checkpoint {
        Some(path) => vec![(
            args.label.clone().unwrap_or_else(|| path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned())),
            path.clone(),
        )],
        None => RUN_CHECKPOINTS
            .iter()
            .map(|(label, file)| (label.to_string(), ctx.out(file)))
            .filter(|(_, p)| p.exists())
            .collect(),
    };
    if targets.is_empty() {
        return Err(CliError::Missing { path: ctx.out("source.ckpt"), hint: "run `sfda train-source` (and `sfda adapt`) first".into() });
    }
    let outputs: Vec<String> = targets.iter().map(|(l, _)| format!("eval/{}.json", slug(l))).collect();
    if ctx.plan("eval", &outputs.iter().map(String::as_str).collect::<Vec<_>>()) {
        return Ok(());
    }
    let test = ctx.dataset("target_test")?;
    let mut reports = Vec::new();
    for (label, path) in &targets {
        let (_, model) = ctx.checkpoint(path, "train or adapt a model first")?;
        let report = evaluate(&model, &test, &ctx.cfg.eval, ctx.cfg.adapt.execution)?.with_checkpoint(path.display().to_string());
        let base = ctx.out(&format!("eval/{}", slug(label)));
        fs::create_dir_all(ctx.out("eval")).map_err(|e| CliError::Runtime(e.to_string()))?;
        report.save(&base.with_extension("json"), Some(&base.with_extension("csv")))?;
        reports.push((label.clone(), report));
    }
    let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
    let table = render_table(&rows);
    ctx.write(&ctx.out("eval/table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn ablate(ctx: &Ctx, kind: &AblateKind) -> Result<()> {
    let name = match kind {
        AblateKind::Sigma { .. } => "sigma",
        AblateKind::Components { .. } => "components",
    };
    let outputs = [format!("ablation/{name}.json"), format!("ablation/{name}.csv"), format!("ablation/{name}.txt")];
    if ctx.plan("ablate", &outputs.iter().map(String::as_str).collect::<Vec<_>>()) {
        return Ok(());
    }
    let (_, source) = ctx.source_model()?;
    let train = ctx.dataset("target_train")?;
    let test = ctx.dataset("target_test")?;
    let start = Instant::now();
    let table = match kind {
        AblateKind::Sigma { sigmas, seeds } => {
            if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
                return Err(CliError::Config(format!("sigma {s} outside (0, 1)")));
            }
            run_ablation_sigma(&source, &train, &test, &ctx.cfg.adapt, sigmas, seeds, &ctx.cfg.eval)?
        }
        AblateKind::Components { seeds } => run_ablation_components(&source, &train, &test, &ctx.cfg.adapt, seeds, &ctx.cfg.eval)?,
    };
    ctx.write(&ctx.out(&outputs[0]), serde_json::to_vec_pretty(&table).map_err(|e| CliError::Runtime(e.to_string()))?)?;
    ctx.write(&ctx.out(&outputs[1]), table.to_csv())?;
    let text = table.render();
    ctx.write(&ctx.out(&outputs[2]), &text)?;
    let mut manifest = RunManifest::new(&format!("ablate {name}"), ctx.config_json(), ctx.cfg.adapt.seed);
    manifest.inputs.insert("target_train".into(), ctx.input_hash("target_train", &train));
    manifest.inputs.insert("target_test".into(), ctx.input_hash("target_test", &test));
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.save(&ctx.out(&format!("ablation/{name}_run.json")))?;
    print!("{text}");
    Ok(())
}

fn plot_cmd(ctx: &Ctx, reference: &str) -> Result<()> {
    let published = sfda_core::metrics::reference::benchmark(reference)
        .ok_or_else(|| CliError::Config(format!("unknown reference benchmark {reference:?} (use rimone or drishti)")))?;
    let mut reports = Vec::new();
    for (label, _) in RUN_CHECKPOINTS {
        let path = ctx.out(&format!("eval/{}.json", slug(label)));
        if path.exists() {
            reports.push((label.to_string(), EvalReport::load(&path)?));
        }
    }
    if reports.is_empty() {
        return Err(CliError::Missing { path: ctx.out("eval"), hint: "run `sfda eval` first".into() });
    }
    let mut outputs = vec!["plots/comparison.svg".to_string()];
    let tables: Vec<AblationTable> = ["sigma", "components"]
        .iter()
        .filter_map(|k| fs::read(ctx.out(&format!("ablation/{k}.json"))).ok())
        .filter_map(|b| serde_json::from_slice(&b).ok())
        .collect();
    outputs.extend(tables.iter().map(|t| format!("plots/ablation_{}.svg", t.kind)));
    if ctx.plan("plot", &outputs.iter().map(String::as_str).collect::<Vec<_>>()) {
        return Ok(());
    }
    fs::create_dir_all(ctx.out("plots")).map_err(|e| CliError::Runtime(e.to_string()))?;
    plot::comparison(&ctx.out(&outputs[0]), &reports, reference, published)?;
    for t in &tables {
        plot::ablation(&ctx.out(&format!("plots/ablation_{}.svg", t.kind)), t)?;
    }
    for o in &outputs {
        println!("wrote {}", ctx.out(o).display());
    }
    Ok(())
}

fn dump(ctx: &Ctx, count: usize, checkpoint: Option<&Path>) -> Result<()> {
    if ctx.plan("dump", &["dump/supervision", "dump/mix"]) {
        return Ok(());
    }
    let (_, teacher) = match checkpoint {
        Some(p) => ctx.checkpoint(p, "pass an existing checkpoint")?,
        None => ctx.source_model()?,
    };
    let target = ctx.dataset("target_train")?;
    let n = count.clamp(1, target.len());
    let images: Vec<_> = target.records[..n].iter().map(|r| &r.image).collect();
    let seed = ctx.cfg.adapt.seed;
    let sup = supervise_batch(&teacher, &images, &ctx.cfg.adapt.pseudo_label(), seed, ctx.cfg.adapt.execution)?;
    for (r, s) in target.records[..n].iter().zip(&sup) {
        s.dump(&ctx.out("dump/supervision"), &r.id)?;
    }
    let mix = ctx.cfg.adapt.mixing();
    let plans = plan_intra(n, seed);
    for plan in &plans {
        let t = build_pair((images[plan.first], &sup[plan.first]), (images[plan.second], &sup[plan.second]), plan, &mix)?;
        let name = format!("{}_into_{}", target.records[plan.first].id, target.records[plan.second].id);
        t.dump(&ctx.out("dump/mix"), &name)?;
    }
    ctx.write(&ctx.out("dump/mix/plans.json"), serde_json::to_vec_pretty(&plans).map_err(|e| CliError::Runtime(e.to_string()))?)?;
    println!("dumped {n} supervision maps and {} mixed samples under {}", plans.len(), ctx.out("dump").display());
    Ok(())
}
