//! Command implementations behind the `stylebind` binary.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use stylebind_core::data::{
    build_aux_corpus, build_base_corpus, build_style_corpus, Provenance, Role, StyleDataset, StyleName, StyleTransformSpec,
};
use stylebind_core::evaluation::{attention_report, stylize, AlignmentTower, Evaluator, FeatureExtractor, MetricReport};
use stylebind_core::nets::autoencoder::LATENT_SCALE;
use stylebind_core::nets::TrainableWeights;
use stylebind_core::personalization::{
    generate_prior_images, pretrain_autoencoder, pretrain_base, train_multi_observed, train_single_observed,
    MultiTrainConfig, PretrainConfig, TrainConfig, TrainMode, TrainOutcome, DEFAULT_LAMBDA, DEFAULT_LEARNING_RATE,
    DEFAULT_PRIOR_IMAGES, DEFAULT_STEPS,
};
use stylebind_core::prompt::{tokenize, PromptSpec};
use stylebind_core::rng;
use stylebind_core::sampler::{SamplerConfig, DEFAULT_CFG_SCALE, DEFAULT_INFERENCE_STEPS};
use stylebind_core::schedule::DiffusionSchedule;
use stylebind_core::Image;

use crate::checkpoint::{load_table, load_weights, save_table, save_weights};
use crate::config::*;
use crate::dataset_io::{read_dataset, read_images, tsv_reader, write_dataset, write_images};
use crate::error::{CliError, Result};
use crate::experiment::{generate, prompt_set_jobs, score, Generated, PromptForm, PromptJob};
use crate::reports::{write_attention, write_csv, write_loss_trace, write_metrics};
use crate::rundir::RunDir;

pub const STYLEREF_TEMPLATE: &str = "a photo of [V] style";
pub const AUX_TEMPLATE: &str = "a photo of style";
pub const DEFAULT_ATTENTION_TIMESTEPS: [usize; 3] = [50, 100, 150];
pub const DEFAULT_T0_FRACTION: f64 = 0.6;
pub const NULL_CAPTION_PROB: f64 = 0.1;

#[derive(Parser, Debug)]
#[command(name = "stylebind", about = "Style personalization of a small latent diffusion model")]
pub struct Cli {
    /// Config file with one `[section]` per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Recompute into an existing output.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a procedural style corpus.
    GenCorpus(GenCorpusArgs),
    /// Fine-tune a base checkpoint on a style.
    Train(TrainArgs),
    /// Sample images from a checkpoint.
    Sample(SampleArgs),
    /// Partially noise images and denoise them under a prompt.
    Stylize(StylizeArgs),
    /// FID, KID and CLIP score of generated images against a reference set.
    Evaluate(EvaluateArgs),
    /// Evaluate every checkpoint of one or more training runs.
    Sweep(SweepArgs),
    /// Cross-attention heatmaps and person-region fractions.
    InspectAttn(InspectAttnArgs),
    /// Train the autoencoder, base model or alignment tower.
    Pretrain(PretrainArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let force = cli.force;
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&overlay(&file.gen_corpus.unwrap_or_default(), &a)?, force).map(|_| ()),
        Command::Train(a) => train(&overlay(&file.train.unwrap_or_default(), &a)?, force).map(|_| ()),
        Command::Sample(a) => sample(&overlay(&file.sample.unwrap_or_default(), &a)?, force),
        Command::Stylize(a) => stylize_cmd(&overlay(&file.stylize.unwrap_or_default(), &a)?, force),
        Command::Evaluate(a) => evaluate(&overlay(&file.evaluate.unwrap_or_default(), &a)?, force).map(|_| ()),
        Command::Sweep(a) => sweep(&overlay(&file.sweep.unwrap_or_default(), &a)?, force).map(|_| ()),
        Command::InspectAttn(a) => inspect_attn(&overlay(&file.inspect_attn.unwrap_or_default(), &a)?, force),
        Command::Pretrain(a) => pretrain(&overlay(&file.pretrain.unwrap_or_default(), &a)?, force),
    }
}

fn save_config(dir: &RunDir, cfg: RunConfig) -> Result<()> {
    cfg.write(&dir.join("config.toml"))
}

pub fn parse_style(name: &str, params: &[String]) -> Result<StyleTransformSpec> {
    let name: StyleName = name.parse().map_err(|_| {
        let known: Vec<_> = StyleName::ALL.iter().map(|s| s.as_str()).collect();
        CliError::Config(format!("unknown style `{name}`, expected one of {}", known.join(", ")))
    })?;
    let mut spec = StyleTransformSpec::new(name);
    for p in params {
        let (k, v) = p.split_once('=').ok_or_else(|| CliError::Usage(format!("--param expects name=value, got `{p}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| CliError::Usage(format!("--param {k}: `{v}` is not a number")))?;
        spec.set(k.trim(), v)?;
    }
    Ok(spec)
}

fn sampler(steps: Option<usize>, cfg: Option<f64>) -> Result<SamplerConfig> {
    let s = SamplerConfig {
        steps: steps.unwrap_or(DEFAULT_INFERENCE_STEPS),
        cfg_scale: cfg.unwrap_or(DEFAULT_CFG_SCALE),
    };
    s.validate()?;
    Ok(s)
}

fn prompt(text: &str) -> Result<PromptSpec> {
    Ok(tokenize(text)?)
}

/// Writes the corpus to `<out>/<style_id>` and returns that directory.
pub fn gen_corpus(a: &GenCorpusArgs, force: bool) -> Result<PathBuf> {
    let mut a = a.clone();
    let role = a.role.get_or_insert_with(|| "styleref".into()).clone();
    let style = parse_style(&required(&a.style, "style")?, a.param.as_deref().unwrap_or(&[]))?;
    let seed = *a.seed.get_or_insert(0);
    let out = required(&a.out, "out")?;
    let ds = match role.as_str() {
        "styleref" => {
            let persons = *a.persons.get_or_insert(10);
            let backgrounds = *a.backgrounds.get_or_insert(10);
            build_style_corpus(&style, persons, backgrounds, seed)?
        }
        "aux" => build_aux_corpus(&style, *a.n.get_or_insert(20), seed)?,
        other => return Err(CliError::Config(format!("unknown corpus role `{other}`, expected styleref or aux"))),
    };
    let dir = RunDir::prepare(&out.join(&ds.style_id), force)?;
    write_dataset(dir.path(), &ds)?;
    save_config(&dir, RunConfig { gen_corpus: Some(a), ..Default::default() })?;
    let path = dir.path().to_path_buf();
    dir.finish()?;
    println!("wrote {} records to {}", ds.len(), path.display());
    Ok(path)
}

fn checkpoint_name(step: usize) -> String {
    format!("step-{step:06}.sfck")
}

/// Runs a training command; returns the run directory.
pub fn train(a: &TrainArgs, force: bool) -> Result<PathBuf> {
    let mut a = a.clone();
    let mode: TrainMode = a.mode.get_or_insert_with(|| "single".into()).parse()?;
    let default_steps = if mode == TrainMode::MultiStyleForge { 2 * DEFAULT_STEPS } else { DEFAULT_STEPS };
    let config = TrainConfig {
        mode,
        lambda: *a.lambda.get_or_insert(DEFAULT_LAMBDA),
        steps: *a.steps.get_or_insert(default_steps),
        learning_rate: *a.learning_rate.get_or_insert(DEFAULT_LEARNING_RATE),
        seed: *a.seed.get_or_insert(0),
        batch_size: *a.batch_size.get_or_insert(1),
        checkpoint_every: *a.checkpoint_every.get_or_insert(100),
    };
    config.validate()?;
    let styleref = read_dataset(&existing(&a.styleref, "styleref")?)?;
    let init = load_weights(&existing(&a.init, "init")?)?;
    let out = required(&a.out, "out")?;
    let aux = match mode {
        TrainMode::DreamBooth => None,
        _ if config.lambda == 0.0 && a.aux.is_none() => Some(StyleDataset::empty("none", Provenance::Ingested)),
        _ => Some(read_dataset(&existing(&a.aux, "aux")?)?),
    };
    styleref.require_role(Role::StyleRef)?;
    if let Some(aux) = aux.as_ref().filter(|d| !d.is_empty()) {
        aux.require_role(Role::Aux)?;
    }
    let prior_n = *a.prior_images.get_or_insert(DEFAULT_PRIOR_IMAGES);
    let dir = RunDir::prepare(&out, force)?;
    save_config(&dir, RunConfig { train: Some(a.clone()), ..Default::default() })?;
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;
    let mut save_err = None;
    let mut observer = |step: usize, w: &TrainableWeights| -> stylebind_core::Result<()> {
        save_weights(&ckpt_dir.join(checkpoint_name(step)), w).map_err(|e| {
            let m = e.to_string();
            save_err = Some(e);
            stylebind_core::Error::Configuration(m)
        })
    };
    let outcome: Result<TrainOutcome> = (|| Ok(match mode {
        TrainMode::SingleStyleForge => {
            train_single_observed(&config, &styleref, aux.as_ref().expect("aux"), &init, &mut observer)?
        }
        TrainMode::MultiStyleForge => {
            let (persons, backgrounds) = styleref.split_persons_backgrounds()?;
            let multi = MultiTrainConfig { datasets: vec![persons, backgrounds], base: config.clone() };
            println!("q = {}", multi.q()?);
            train_multi_observed(&multi, aux.as_ref().expect("aux"), &init, &mut observer)?
        }
        TrainMode::DreamBooth => {
            let prior = generate_prior_images(&init, &prompt(AUX_TEMPLATE)?, prior_n, &SamplerConfig::default(), config.seed)?;
            write_dataset(&dir.join("prior"), &prior)?;
            train_single_observed(&config, &styleref, &prior, &init, &mut observer)?
        }
    }))();
    if let Some(e) = save_err {
        return Err(e);
    }
    let outcome = outcome?;
    save_weights(&dir.join("model.sfck"), &outcome.weights)?;
    write_loss_trace(&dir.join("loss.csv"), &outcome.trace)?;
    let path = dir.path().to_path_buf();
    dir.finish()?;
    Ok(path)
}

#[derive(Serialize)]
struct PromptRow<'a> {
    index: usize,
    prompt: &'a str,
    scoring_prompt: &'a str,
}

fn write_generated(dir: &RunDir, g: &Generated) -> Result<()> {
    write_images(&dir.join("images"), &g.images)?;
    let path = dir.join("prompts.tsv");
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_path(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for (i, (p, s)) in g.prompts.iter().zip(&g.scoring).enumerate() {
        w.serialize(PromptRow { index: i, prompt: p.text(), scoring_prompt: s.as_ref().map_or("", |s| s.text()) })?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

/// Scoring prompts recorded by `sample`, when every image has one.
pub fn read_scoring_prompts(dir: &Path) -> Result<Option<Vec<PromptSpec>>> {
    let path = dir.join("prompts.tsv");
    if !path.exists() {
        return Ok(None);
    }
    let mut out = Vec::new();
    for row in tsv_reader(&path)?.records() {
        let row = row?;
        match row.get(2) {
            Some(s) if !s.is_empty() => out.push(prompt(s)?),
            _ => return Ok(None),
        }
    }
    Ok(Some(out))
}

fn jobs(
    fixed: &Option<Vec<String>>,
    set: Option<usize>,
    set_seed: Option<u64>,
    form: &Option<String>,
) -> Result<(Vec<PromptJob>, String)> {
    let form: PromptForm = form.as_deref().unwrap_or("single").parse()?;
    match (fixed, set) {
        (Some(_), Some(_)) => Err(CliError::Usage("give either --prompt or --prompt-set, not both".into())),
        (Some(ps), None) => {
            let jobs = ps.iter().map(|p| Ok(PromptJob { prompt: prompt(p)?, scoring: None })).collect::<Result<_>>()?;
            Ok((jobs, "fixed".into()))
        }
        (None, Some(n)) => {
            let seed = set_seed.unwrap_or(0);
            let id = format!("eval-{n}-seed{seed}-{}", if form == PromptForm::Single { "single" } else { "multi" });
            Ok((prompt_set_jobs(n, seed, form)?, id))
        }
        (None, None) => Err(CliError::Usage("missing --prompt or --prompt-set".into())),
    }
}

pub fn sample(a: &SampleArgs, force: bool) -> Result<()> {
    let weights = load_weights(&existing(&a.checkpoint, "checkpoint")?)?;
    let (jobs, _) = jobs(&a.prompt, a.prompt_set, a.prompt_set_seed, &a.form)?;
    let sampler = sampler(a.steps, a.cfg)?;
    let out = required(&a.out, "out")?;
    let dir = RunDir::prepare(&out, force)?;
    save_config(&dir, RunConfig { sample: Some(a.clone()), ..Default::default() })?;
    let g = generate(&weights, &jobs, a.n.unwrap_or(6), &sampler, a.seed.unwrap_or(0))?;
    write_generated(&dir, &g)?;
    dir.finish()
}

pub fn stylize_cmd(a: &StylizeArgs, force: bool) -> Result<()> {
    let weights = load_weights(&existing(&a.checkpoint, "checkpoint")?)?;
    let input = existing(&a.input, "input")?;
    let inputs = if input.is_dir() { read_images(&input)? } else { vec![crate::pnm::read_ppm(&input)?] };
    let p = prompt(a.prompt.as_deref().unwrap_or(STYLEREF_TEMPLATE))?;
    let sampler = sampler(a.steps, a.cfg)?;
    let t0 = a.t0.unwrap_or(DEFAULT_T0_FRACTION);
    let seed = a.seed.unwrap_or(0);
    let dir = RunDir::prepare(&required(&a.out, "out")?, force)?;
    save_config(&dir, RunConfig { stylize: Some(a.clone()), ..Default::default() })?;
    let outs = inputs
        .iter()
        .enumerate()
        .map(|(i, img)| stylize(&weights, img, &p, t0, &sampler, rng::derive_seed(seed, &format!("input-{i}"))))
        .collect::<stylebind_core::Result<Vec<Image>>>()?;
    write_images(&dir.join("images"), &outs)?;
    dir.finish()
}

fn load_tower(path: &Option<PathBuf>) -> Result<Option<AlignmentTower>> {
    match path {
        Some(_) => Ok(Some(AlignmentTower { weights: load_table(&existing(path, "tower")?)? })),
        None => Ok(None),
    }
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

pub fn evaluate(a: &EvaluateArgs, force: bool) -> Result<MetricReport> {
    let gen_dir = existing(&a.generated, "generated")?;
    let ref_dir = existing(&a.reference, "reference")?;
    let tower = load_tower(&a.tower)?;
    let generated = read_images(&gen_dir)?;
    let reference = read_images(&ref_dir)?;
    let scoring = read_scoring_prompts(&gen_dir)?;
    let extractor = FeatureExtractor::new(a.feature_seed.unwrap_or(0));
    let ev = Evaluator { extractor: &extractor, tower: tower.as_ref() };
    let (fid, kid, clip) = ev.evaluate(&generated, scoring.as_deref(), &reference)?;
    let report = MetricReport {
        checkpoint_id: a.checkpoint_id.clone().unwrap_or_else(|| dir_name(&gen_dir)),
        step: a.step.unwrap_or(0),
        style_id: dir_name(&ref_dir),
        prompt_set_id: dir_name(&gen_dir),
        fid,
        kid,
        clip_score: clip,
        n_generated: generated.len(),
        n_reference: reference.len(),
    };
    let dir = RunDir::prepare(&required(&a.out, "out")?, force)?;
    save_config(&dir, RunConfig { evaluate: Some(a.clone()), ..Default::default() })?;
    write_metrics(&dir.join("metrics.csv"), std::slice::from_ref(&report))?;
    dir.finish()?;
    println!("fid {fid:.6} kid_x1000 {:.6} clip {}", kid * 1000.0, clip.map_or("-".into(), |c| format!("{c:.4}")));
    Ok(report)
}

/// Checkpoints of a training run ordered by step.
pub fn run_checkpoints(run: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let dir = run.join("checkpoints");
    let mut out = Vec::new();
    for e in std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
        let p = e.map_err(|e| CliError::io(&dir, e))?.path();
        let step = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|n| n.strip_suffix(".sfck"))
            .and_then(|n| n.parse().ok());
        if let Some(s) = step {
            out.push((s, p));
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("no checkpoints in {}", dir.display())));
    }
    out.sort();
    Ok(out)
}

#[derive(Serialize)]
struct ArmRow {
    arm: String,
    best_step: usize,
    best_fid: f64,
    kid_x1000_at_best: f64,
    clip_at_best: Option<f64>,
    first_fid: f64,
    final_fid: f64,
}

pub fn sweep(a: &SweepArgs, force: bool) -> Result<Vec<MetricReport>> {
    let runs = required(&a.run, "run")?;
    for r in &runs {
        if !r.exists() {
            return Err(CliError::Config(format!("--run: {} does not exist", r.display())));
        }
    }
    let reference_dir = existing(&a.reference, "reference")?;
    let reference = read_images(&reference_dir)?;
    let style_id = dir_name(&reference_dir);
    let tower = load_tower(&a.tower)?;
    let (jobs, set_id) = jobs(&a.prompt, a.prompt_set, a.prompt_set_seed, &a.form)?;
    let sampler = sampler(a.steps, a.cfg)?;
    let (per_prompt, seed) = (a.n.unwrap_or(6), a.seed.unwrap_or(0));
    let extractor = FeatureExtractor::new(a.feature_seed.unwrap_or(0));
    let mut tasks = Vec::new();
    for r in &runs {
        for (step, p) in run_checkpoints(r)? {
            tasks.push((dir_name(r), step, p));
        }
    }
    let dir = RunDir::prepare(&required(&a.out, "out")?, force)?;
    save_config(&dir, RunConfig { sweep: Some(a.clone()), ..Default::default() })?;
    let eval_one = |(arm, step, path): &(String, usize, PathBuf)| -> Result<MetricReport> {
        let w = load_weights(path)?;
        let g = generate(&w, &jobs, per_prompt, &sampler, seed)?;
        let ev = Evaluator { extractor: &extractor, tower: tower.as_ref() };
        score(&ev, &g, &reference, &format!("{arm}/{}", checkpoint_name(*step)), *step, &style_id, &set_id)
    };
    let threads = a.threads.unwrap_or(1).max(1);
    let mut reports: Vec<Option<Result<MetricReport>>> = (0..tasks.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = reports.chunks_mut(tasks.len().div_ceil(threads).max(1)).collect();
        let mut start = 0;
        for chunk in chunks {
            let lo = start;
            start += chunk.len();
            let (tasks, eval_one) = (&tasks, &eval_one);
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(eval_one(&tasks[lo + k]));
                }
            });
        }
    });
    let reports = reports.into_iter().map(|r| r.expect("evaluated")).collect::<Result<Vec<_>>>()?;
    write_metrics(&dir.join("metrics.csv"), &reports)?;
    let mut arms = Vec::new();
    for r in &runs {
        let arm = dir_name(r);
        let rows: Vec<&MetricReport> = reports.iter().filter(|m| m.checkpoint_id.starts_with(&format!("{arm}/"))).collect();
        let best = rows.iter().min_by(|x, y| x.fid.total_cmp(&y.fid)).expect("non-empty run");
        arms.push(ArmRow {
            arm,
            best_step: best.step,
            best_fid: best.fid,
            kid_x1000_at_best: best.kid * 1000.0,
            clip_at_best: best.clip_score,
            first_fid: rows[0].fid,
            final_fid: rows[rows.len() - 1].fid,
        });
    }
    write_csv(&dir.join("arms.csv"), &arms)?;
    dir.finish()?;
    Ok(reports)
}

#[derive(Serialize)]
struct AttentionRow {
    image: usize,
    token: usize,
    word: String,
    person_fraction: Option<f64>,
    baseline: Option<f64>,
}

pub fn inspect_attn(a: &InspectAttnArgs, force: bool) -> Result<()> {
    let weights = load_weights(&existing(&a.checkpoint, "checkpoint")?)?;
    let ds = read_dataset(&existing(&a.dataset, "dataset")?)?;
    let p = prompt(a.prompt.as_deref().unwrap_or(STYLEREF_TEMPLATE))?;
    let timesteps = a.timestep.clone().unwrap_or_else(|| DEFAULT_ATTENTION_TIMESTEPS.to_vec());
    let seed = a.seed.unwrap_or(0);
    let dir = RunDir::prepare(&required(&a.out, "out")?, force)?;
    save_config(&dir, RunConfig { inspect_attn: Some(a.clone()), ..Default::default() })?;
    let mut rows = Vec::new();
    let (mut above_both, mut with_mask) = (0, 0);
    for (i, r) in ds.records().iter().enumerate() {
        let rep = attention_report(
            &weights,
            &p,
            &r.image,
            r.person_mask.as_deref(),
            &timesteps,
            rng::derive_seed(seed, &format!("image-{i}")),
        )?;
        write_attention(dir.path(), &format!("img{i}"), &rep)?;
        for (k, word) in rep.tokens.iter().enumerate() {
            rows.push(AttentionRow {
                image: i,
                token: k,
                word: word.clone(),
                person_fraction: rep.person_fraction.as_ref().map(|f| f[k]),
                baseline: rep.person_baseline,
            });
        }
        if let (Some(f), Some(b), Some(s), Some(v)) =
            (&rep.person_fraction, rep.person_baseline, rep.token_index("style"), rep.token_index("[V]"))
        {
            with_mask += 1;
            if f[s] > b && f[s] > f[v] {
                above_both += 1;
            }
        }
    }
    write_csv(&dir.join("attention.csv"), &rows)?;
    dir.finish()?;
    if with_mask > 0 {
        println!("style token favours the person on {above_both}/{with_mask} images");
    }
    Ok(())
}

/// Images for autoencoder pretraining: the base corpus plus persons and
/// backgrounds in every style.
pub fn autoencoder_corpus(n: usize, seed: u64) -> Result<Vec<Image>> {
    let mut imgs: Vec<Image> = build_base_corpus(n, seed)?.into_iter().map(|c| c.image).collect();
    for (k, s) in StyleName::ALL.iter().enumerate() {
        let per = (n / 25).max(1);
        let ds = build_style_corpus(&StyleTransformSpec::new(*s), per, per, rng::derive_seed(seed, &format!("ae-style-{k}")))?;
        imgs.extend(ds.images());
    }
    Ok(imgs)
}

pub fn pretrain(a: &PretrainArgs, force: bool) -> Result<()> {
    let what = required(&a.what, "what")?;
    let out = required(&a.out, "out")?;
    if out.exists() && !force {
        return Err(CliError::Config(format!("{} exists; pass --force to overwrite it", out.display())));
    }
    let n = a.n.unwrap_or(1000);
    let seed = a.seed.unwrap_or(0);
    let cfg = |steps, lr, batch| PretrainConfig {
        steps: a.steps.unwrap_or(steps),
        learning_rate: a.learning_rate.unwrap_or(lr),
        batch_size: a.batch_size.unwrap_or(batch),
        seed,
    };
    match what.as_str() {
        "autoencoder" => {
            let (ae, trace) = pretrain_autoencoder(&autoencoder_corpus(n, seed)?, &cfg(3000, 2e-3, 8))?;
            save_table(&out, &ae)?;
            println!("final reconstruction loss {:.6}, latent scale {:.6}", trace.last().copied().unwrap_or(f64::NAN), ae.get(LATENT_SCALE)?.data()[0]);
        }
        "base" => {
            let ae = load_table(&existing(&a.autoencoder, "autoencoder")?)?;
            let init = TrainableWeights::init(rng::derive_seed(seed, "base-init"), ae, DiffusionSchedule::default());
            let corpus = build_base_corpus(n, seed)?;
            let (w, trace) = pretrain_base(&init, &corpus, &cfg(4000, 1e-3, 4), NULL_CAPTION_PROB)?;
            save_weights(&out, &w)?;
            let tail = &trace[trace.len().saturating_sub(100)..];
            println!("final mean loss {:.6}", tail.iter().map(|r| r.total).sum::<f64>() / tail.len().max(1) as f64);
        }
        "tower" => {
            let corpus = build_base_corpus(n, seed)?;
            let (tower, trace) = stylebind_core::evaluation::train_alignment_tower(&corpus, &cfg(2000, 1e-3, 16))?;
            save_table(&out, &tower.weights)?;
            println!("final contrastive loss {:.6}", trace.last().copied().unwrap_or(f64::NAN));
        }
        other => return Err(CliError::Config(format!("unknown pretraining target `{other}`, expected autoencoder, base or tower"))),
    }
    Ok(())
}
