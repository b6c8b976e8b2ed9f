use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use stylebind::checkpoint::{load_weights, save_weights};
use stylebind::commands::{sweep, DEFAULT_ATTENTION_TIMESTEPS, STYLEREF_TEMPLATE};
use stylebind::config::SweepArgs;
use stylebind::dataset_io::read_dataset;
use stylebind::experiment::{prompt_jobs, PromptForm, PromptJob};
use stylebind::reports::{read_csv, LossCsvRow};
use stylebind_core::data::{build_style_corpus, eval_prompt_grid, PromptCategory, Provenance, StyleDataset, StyleName, StyleTransformSpec};
use stylebind_core::evaluation::{attention_report, fid, fid_from_stats, kid, poly_kernel, stylize};
use stylebind_core::nets::autoencoder::{self, reconstruct};
use stylebind_core::nets::{denoise, encode_image, text_encode, TrainableWeights};
use stylebind_core::personalization::{
    draw_pair, pair_loss, selection_sequence, ssf_loss, train_multi, train_single, ModelPredictor, MultiTrainConfig,
    TrainConfig,
};
use stylebind_core::prompt::{tokenize, PromptSpec};
use stylebind_core::rng::{self, Rng};
use stylebind_core::sampler::{sample_images, SamplerConfig};
use stylebind_core::schedule::{denoising_loss, forward_diffuse, DiffusionSchedule, LatentCode, NoiseSample};
use stylebind_core::{Image, Tensor};

use crate::lab::{corpus, fixtures, read_text, Lab, Res, EVAL_IMAGES, EVAL_SEED};
use crate::Check;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

// Gradients

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, for coordinates whose gradient
/// vanishes.
pub const FD_FLOOR: f64 = 1e-8;
pub const FD_SAMPLES: usize = 24;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Group {
    Theta,
    Phi,
}

type Coord = (Group, String, usize);

fn table(w: &mut TrainableWeights, g: Group) -> &mut stylebind_core::TensorTable {
    match g {
        Group::Theta => &mut w.theta,
        Group::Phi => &mut w.phi,
    }
}

fn all_coords(w: &TrainableWeights, g: Group, keep: impl Fn(&str, &Tensor) -> bool) -> Vec<Coord> {
    let t = match g {
        Group::Theta => &w.theta,
        Group::Phi => &w.phi,
    };
    t.iter().filter(|(n, x)| keep(n, x)).flat_map(|(n, x)| (0..x.len()).map(move |i| (g, n.to_string(), i))).collect()
}

pub fn c01_gradients(_: &mut Lab) -> Check {
    let mut w = TrainableWeights::init(7, autoencoder::init_params(11), DiffusionSchedule::default());
    let mut r = rng::seeded(8);
    for (_, t) in w.theta.iter_mut().chain(w.phi.iter_mut()) {
        for v in t.data_mut() {
            *v += 0.05 * rng::normal(&mut r);
        }
    }
    let styleref = tokenize(STYLEREF_TEMPLATE)?;
    let aux = tokenize("a photo of style")?;
    let draws: Vec<_> = (0..2)
        .map(|_| {
            let zs = rng::normal_tensor(&mut r, &stylebind_core::nets::latent_shape());
            let za = rng::normal_tensor(&mut r, &stylebind_core::nets::latent_shape());
            draw_pair(&mut r, w.schedule.steps(), (&zs, &styleref), Some((&za, &aux)))
        })
        .collect();
    let loss = |w: &TrainableWeights| -> Res<f64> { Ok(pair_loss(&ModelPredictor, w, &draws, 1.0)?.0.total) };
    let (_, grads) = pair_loss(&ModelPredictor, &w, &draws, 1.0)?;

    let mut used: Vec<usize> = styleref.encoder_tokens();
    used.extend(aux.encoder_tokens());
    let positions = styleref.encoder_tokens().len().max(aux.encoder_tokens().len());
    let dim = w.phi.get("token_embedding")?.shape()[1];
    let mut embedding: Vec<Coord> = Vec::new();
    for &id in &used {
        embedding.extend((0..dim).map(|j| (Group::Phi, "token_embedding".to_string(), id * dim + j)));
    }
    for p in 0..positions {
        embedding.extend((0..dim).map(|j| (Group::Phi, "position_embedding".to_string(), p * dim + j)));
    }
    embedding.sort();
    embedding.dedup();
    let is_attn = |n: &str, _: &Tensor| n.starts_with("attn.") && !n.starts_with("attn.norm");
    let mut attention = all_coords(&w, Group::Theta, is_attn);
    attention.extend(all_coords(&w, Group::Phi, is_attn));
    let conv = all_coords(&w, Group::Theta, |_, t| t.rank() == 4);
    let time = all_coords(&w, Group::Theta, |n, _| n.starts_with("time."));

    let mut pick = rng::seeded(9);
    let mut detail = Vec::new();
    let mut pass = true;
    for (class, coords) in [("embedding", embedding), ("attention", attention), ("conv", conv), ("time", time)] {
        if coords.len() < FD_SAMPLES {
            return Err(format!("{class} has only {} coordinates", coords.len()).into());
        }
        let mut worst: f64 = 0.0;
        for _ in 0..FD_SAMPLES {
            let (g, name, i) = &coords[rng::index(&mut pick, coords.len())];
            let an = match g {
                Group::Theta => grads.theta.get(name)?.data()[*i],
                Group::Phi => grads.phi.get(name)?.data()[*i],
            };
            let mut wp = w.clone();
            table(&mut wp, *g).get_mut(name)?.data_mut()[*i] += FD_STEP;
            let mut wm = w.clone();
            table(&mut wm, *g).get_mut(name)?.data_mut()[*i] -= FD_STEP;
            let fd = (loss(&wp)? - loss(&wm)?) / (2.0 * FD_STEP);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
        pass &= worst < FD_TOLERANCE;
        detail.push(format!("{class} max rel {worst:.2e}"));
    }
    Ok((pass, detail.join(", ")))
}

// Forward process

pub const MC_DRAWS: usize = 10_000;
pub const MC_SE: f64 = 4.0;

pub fn c02_forward(_: &mut Lab) -> Check {
    let s = DiffusionSchedule::default();
    let worst_identity =
        (0..=s.steps()).map(|t| (s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs()).fold(0.0, f64::max);
    let mut pass = worst_identity <= 1e-12;
    let mut r = rng::seeded(21);
    let shape = stylebind_core::nets::latent_shape();
    let z0 = LatentCode::clean(rng::normal_tensor(&mut r, &shape));
    let d = z0.data.len();
    let mut worst_z: f64 = 0.0;
    for t in [1, 50, 100, 150, s.steps()] {
        let (a, sg) = (s.alpha(t), s.sigma(t));
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..MC_DRAWS {
            let eps = NoiseSample { data: rng::normal_tensor(&mut r, &shape) };
            let z = forward_diffuse(&z0, t, &eps, &s)?;
            for (k, v) in z.data.data().iter().enumerate() {
                let c = v - a * z0.data.data()[k];
                sum[k] += c;
                sq[k] += c * c;
            }
        }
        let n = MC_DRAWS as f64;
        let se_mean = sg / n.sqrt();
        let u: Vec<f64> = sum.iter().map(|s| s / n / se_mean).collect();
        let pooled_mean = u.iter().sum::<f64>() / (d as f64).sqrt();
        let chi = u.iter().map(|x| x * x).sum::<f64>();
        let chi_z = (chi - d as f64) / (2.0 * d as f64).sqrt();
        let vars: Vec<f64> = (0..d).map(|k| (sq[k] - sum[k] * sum[k] / n) / (n - 1.0)).collect();
        let se_var = sg * sg * (2.0 / (n - 1.0)).sqrt() / (d as f64).sqrt();
        let var_z = (mean(&vars) - sg * sg) / se_var;
        for z in [pooled_mean, chi_z, var_z] {
            worst_z = worst_z.max(z.abs());
        }
    }
    pass &= worst_z <= MC_SE;
    Ok((pass, format!("max |alpha^2+sigma^2-1| {worst_identity:.1e}, worst standardized deviation {worst_z:.2}")))
}

// Reductions

fn bare_term(w: &TrainableWeights, r: &mut Rng, z: &Tensor, prompt: &PromptSpec) -> Res<f64> {
    let d = draw_pair(r, w.schedule.steps(), (z, prompt), None);
    let z_t = forward_diffuse(&d.styleref.z0, d.t, &d.styleref.eps, &w.schedule)?;
    let c = text_encode(w, prompt)?;
    let (eps, _) = denoise(w, &z_t, d.t, &c, false)?;
    Ok(denoising_loss(&eps, &d.styleref.eps)?)
}

pub fn c03_reductions(lab: &mut Lab) -> Check {
    let w = lab.base()?;
    let styleref = lab.styleref()?;
    let aux = read_dataset(&corpus("aux", "realism_analog"))?;
    let mut mismatches = 0;
    for (b, seed) in [(1usize, 5u64), (2, 6), (4, 7)] {
        let batch = &styleref.records()[..b];
        let mut r = rng::seeded(seed);
        let mut terms = Vec::new();
        for rec in batch {
            terms.push(bare_term(&w, &mut r, &encode_image(&w.frozen_autoencoder, &rec.image)?.data, &rec.prompt)?);
        }
        let sum = terms[1..].iter().fold(terms[0], |a, t| a + t);
        let bare = if b == 1 { sum } else { sum * (1.0 / b as f64) };
        let without = ssf_loss(&w, batch, &[], 0.0, &mut rng::seeded(seed))?.0.total;
        let with_aux = ssf_loss(&w, batch, &aux.records()[..b], 0.0, &mut rng::seeded(seed))?.0.total;
        mismatches += usize::from(without.to_bits() != bare.to_bits()) + usize::from(with_aux.to_bits() != bare.to_bits());
    }

    let cfg = TrainConfig { steps: 12, seed: 3, learning_rate: 1e-3, batch_size: 2, ..Default::default() };
    let single = train_single(&cfg, &styleref, &aux, &w)?;
    let multi_cfg = MultiTrainConfig {
        datasets: vec![styleref.clone(), StyleDataset::empty("pixelation", styleref.provenance)],
        base: cfg,
    };
    let multi = train_multi(&multi_cfg, &aux, &w)?;
    let same_weights = multi.weights == single.weights;
    let same_trace = single.trace.len() == multi.trace.len()
        && single.trace.iter().zip(&multi.trace).all(|(a, b)| a.total.to_bits() == b.total.to_bits());
    Ok((
        mismatches == 0 && same_weights && same_trace,
        format!("{mismatches} bitwise mismatches in 6 lambda=0 batches, empty-component run identical: {}", same_weights && same_trace),
    ))
}

// Mixing

pub const SELECTION_DRAWS: usize = 10_000;

pub fn c04_mixing(lab: &mut Lab) -> Check {
    let ds = build_style_corpus(&StyleTransformSpec::new(StyleName::Pixelation), 15, 5, 4)?;
    let (persons, backgrounds) = ds.split_persons_backgrounds()?;
    let base = TrainConfig { steps: 16, seed: 11, learning_rate: 1e-4, lambda: 0.0, ..Default::default() };
    let cfg = MultiTrainConfig { datasets: vec![persons, backgrounds], base };
    let q = cfg.q()?;
    let seq = selection_sequence(q, SELECTION_DRAWS, 11);
    let hits = seq.iter().filter(|&&s| s == 0).count() as f64;
    let n = SELECTION_DRAWS as f64;
    let sd = (n * q * (1.0 - q)).sqrt();
    let z = (hits - n * q) / sd;
    let w = lab.base()?;
    let out = train_multi(&cfg, &StyleDataset::empty("none", Provenance::Procedural), &w)?;
    let prefix = out.selections == seq[..out.selections.len()] && out.selections.len() == 16;
    Ok((
        q == 0.75 && z.abs() <= 3.0 && prefix,
        format!("q = {q}, {hits} of {SELECTION_DRAWS} draws chose D1 (z = {z:.2}), training draws follow the stream: {prefix}"),
    ))
}

// Metric oracles

pub const FID_ORACLE_TOLERANCE: f64 = 1e-6;
pub const KID_REPETITIONS: usize = 500;
pub const KID_SE: f64 = 3.0;

fn read_fid_sets() -> Res<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let text = read_text(&fixtures().join("oracle/fid_sets.txt"))?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut it = line.split_whitespace();
        let set = it.next().ok_or("empty line")?;
        let row = it.map(str::parse).collect::<Result<Vec<f64>, _>>()?;
        match set {
            "a" => a.push(row),
            "b" => b.push(row),
            other => return Err(format!("unknown set {other}").into()),
        }
    }
    Ok((a, b))
}

fn population_mmd(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let avg = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.iter().flat_map(|a| y.iter().map(move |b| poly_kernel(a, b))).sum::<f64>() / (x.len() * y.len()) as f64
    };
    avg(p, p) + avg(q, q) - 2.0 * avg(p, q)
}

pub fn c05_metrics(_: &mut Lab) -> Check {
    let (a, b) = read_fid_sets()?;
    let expected: f64 = read_text(&fixtures().join("oracle/fid_expected.txt"))?.trim().parse()?;
    let got = fid(&a, &b)?;
    let fid_err = (got - expected).abs();

    let d = 5;
    let mut shift = DVector::zeros(d);
    shift[0] = 1.0;
    let analytic = fid_from_stats(&DVector::zeros(d), &DMatrix::identity(d, d), &shift, &DMatrix::identity(d, d))?;

    let row = vec![0.5, -0.25, 1.0, 0.75];
    let equal = kid(&vec![row.clone(); 9], &vec![row; 7])?;

    let mut r = rng::seeded(31);
    let mut population = |n: usize, shift: f64| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..6).map(|_| rng::normal(&mut r) + shift).collect()).collect()
    };
    let p = population(40, 0.0);
    let q = population(40, 0.4);
    let target = population_mmd(&p, &q);
    let mut est = Vec::with_capacity(KID_REPETITIONS);
    for _ in 0..KID_REPETITIONS {
        let xs: Vec<_> = (0..10).map(|_| p[rng::index(&mut r, p.len())].clone()).collect();
        let ys: Vec<_> = (0..10).map(|_| q[rng::index(&mut r, q.len())].clone()).collect();
        est.push(kid(&xs, &ys)?);
    }
    let se = (variance(&est) / est.len() as f64).sqrt();
    let z = (mean(&est) - target) / se;
    Ok((
        fid_err <= FID_ORACLE_TOLERANCE && analytic == 1.0 && equal == 0.0 && z.abs() <= KID_SE,
        format!(
            "fid {got:.12} vs oracle {expected:.12} (err {fid_err:.1e}), shifted unit Gaussian {analytic}, equal-set kid {equal}, \
             kid mean {:.5} vs population {target:.5} (z = {z:.2})",
            mean(&est)
        ),
    ))
}

// Efficacy

fn identifier_jobs() -> Res<Vec<PromptJob>> {
    Ok(vec![PromptJob { prompt: tokenize(STYLEREF_TEMPLATE)?, scoring: None }])
}

pub fn c06_efficacy(lab: &mut Lab) -> Check {
    let run = lab.run("single")?;
    let trace: Vec<LossCsvRow> = read_csv(&run.join("loss.csv"))?;
    if trace.len() < 100 {
        return Err(format!("loss trace has {} rows", trace.len()).into());
    }
    let totals: Vec<f64> = trace.iter().map(|r| r.total_loss).collect();
    let first = mean(&totals[..50]);
    let last = mean(&totals[totals.len() - 50..]);
    let args = SweepArgs {
        run: Some(vec![run.clone()]),
        reference: Some(Lab::reference_dir()),
        prompt: Some(vec![STYLEREF_TEMPLATE.to_string()]),
        n: Some(EVAL_IMAGES),
        seed: Some(EVAL_SEED),
        feature_seed: Some(crate::lab::FEATURE_SEED),
        threads: Some(1),
        out: Some(lab.path("sweep-single")),
        ..Default::default()
    };
    let reports = sweep(&args, true)?;
    let fid0 = reports.iter().find(|m| m.step == 0).ok_or("no step-0 checkpoint")?.fid;
    let best = reports.iter().filter(|m| m.step > 0).min_by(|x, y| x.fid.total_cmp(&y.fid)).ok_or("no trained checkpoint")?;
    if let Some(last) = reports.iter().max_by_key(|m| m.step) {
        lab.record("identifier/single", last.clone());
    }
    let curve: Vec<String> = reports.iter().map(|m| format!("{}:{:.3}", m.step, m.fid)).collect();
    Ok((
        last <= 0.5 * first && best.fid < fid0,
        format!(
            "loss {first:.4} -> {last:.4} (ratio {:.3}), fid step 0 {fid0:.3}, best {:.3} at step {} [{}]",
            last / first,
            best.fid,
            best.step,
            curve.join(" ")
        ),
    ))
}

fn identifier_fid(lab: &mut Lab, arm: &str) -> Res<f64> {
    Ok(lab.evaluate(&format!("identifier/{arm}"), arm, &identifier_jobs()?, EVAL_IMAGES)?.fid)
}

pub fn c07_composition(lab: &mut Lab) -> Check {
    let mixed = identifier_fid(lab, "mixed")?;
    let persons = identifier_fid(lab, "persons")?;
    let backgrounds = identifier_fid(lab, "backgrounds")?;
    Ok((
        mixed < persons && mixed < backgrounds,
        format!("fid mixed {mixed:.3}, only persons {persons:.3}, only backgrounds {backgrounds:.3}"),
    ))
}

pub fn c08_aux(lab: &mut Lab) -> Check {
    let curated = identifier_fid(lab, "single")?;
    let generated = identifier_fid(lab, "dreambooth")?;
    Ok((curated < generated, format!("fid curated aux {curated:.3}, generated aux {generated:.3}")))
}

/// Evaluation subjects whose prompts mention both a person and a background.
pub const COMBINED_GRID: usize = 40;
pub const COMBINED_PER_PROMPT: usize = 12;
pub const MULTI_FID_RATIO: f64 = 1.2;

pub fn c09_multi(lab: &mut Lab) -> Check {
    let grid: Vec<_> =
        eval_prompt_grid(COMBINED_GRID, EVAL_SEED)?.into_iter().filter(|p| p.category == PromptCategory::Combined).collect();
    let single = lab.evaluate("combined/single", "single", &prompt_jobs(&grid, PromptForm::Single)?, COMBINED_PER_PROMPT)?;
    let multi = lab.evaluate("combined/multi", "multi", &prompt_jobs(&grid, PromptForm::Multi)?, COMBINED_PER_PROMPT)?;
    let (cs, cm) = (single.clip_score.ok_or("no clip score")?, multi.clip_score.ok_or("no clip score")?);
    Ok((
        cm > cs && multi.fid <= MULTI_FID_RATIO * single.fid,
        format!(
            "{} combined prompts: clip multi {cm:.3} vs single {cs:.3}, fid multi {:.3} vs single {:.3} (ratio {:.3})",
            grid.len(),
            multi.fid,
            single.fid,
            multi.fid / single.fid
        ),
    ))
}

pub const ATTENTION_SHARE: f64 = 0.7;

pub fn c10_attention(lab: &mut Lab) -> Check {
    let w = lab.final_weights("single")?;
    let held_out = read_dataset(&corpus("heldout", "pixelation"))?;
    let prompt = tokenize(STYLEREF_TEMPLATE)?;
    let (mut wins, mut total) = (0usize, 0usize);
    let (mut style_sum, mut v_sum, mut base_sum) = (0.0, 0.0, 0.0);
    for (i, rec) in held_out.records().iter().enumerate() {
        let Some(mask) = &rec.person_mask else { continue };
        let rep = attention_report(&w, &prompt, &rec.image, Some(mask), &DEFAULT_ATTENTION_TIMESTEPS, rng::derive_seed(EVAL_SEED, &format!("attn-{i}")))?;
        let fr = rep.person_fraction.as_ref().ok_or("no person fractions")?;
        let base = rep.person_baseline.ok_or("no baseline")?;
        let style = fr[rep.token_index("style").ok_or("no style token")?];
        let v = fr[rep.token_index("[V]").ok_or("no [V] token")?];
        total += 1;
        wins += usize::from(style > base && style > v);
        style_sum += style;
        v_sum += v;
        base_sum += base;
    }
    if total == 0 {
        return Err("no held-out image has a person mask".into());
    }
    let n = total as f64;
    Ok((
        wins as f64 >= ATTENTION_SHARE * n,
        format!(
            "style token leads on {wins}/{total} images; mean person fraction style {:.3}, [V] {:.3}, uniform {:.3}",
            style_sum / n,
            v_sum / n,
            base_sum / n
        ),
    ))
}

/// Largest per-channel deviation allowed between stylization at `t0 = 0`
/// and the autoencoder reconstruction.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-12;
pub const STYLIZE_SAMPLES: usize = 64;
/// Two-sided 1% level, Bonferroni-corrected over the 64 features (normal
/// approximation).
pub const FEATURE_T_CRITICAL: f64 = 3.78;

pub fn c11_stylize(lab: &mut Lab) -> Check {
    let w = lab.final_weights("single")?;
    let inputs = read_dataset(&corpus("heldout", "pixelation"))?.images();
    let null = tokenize("")?;
    let sampler = SamplerConfig::default();
    let mut recon_err: f64 = 0.0;
    for (i, img) in inputs.iter().enumerate().take(8) {
        let out = stylize(&w, img, &tokenize(STYLEREF_TEMPLATE)?, 0.0, &sampler, i as u64)?;
        let rec = reconstruct(&w.frozen_autoencoder, img)?;
        let err = out.tensor().data().iter().zip(rec.tensor().data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        recon_err = recon_err.max(err);
    }
    let mut edited: Vec<Image> = Vec::with_capacity(STYLIZE_SAMPLES);
    for i in 0..STYLIZE_SAMPLES {
        let input = &inputs[i % inputs.len()];
        edited.push(stylize(&w, input, &null, 1.0, &sampler, rng::derive_seed(EVAL_SEED, &format!("edit-{i}")))?);
    }
    let sampled = sample_images(&w, &null, STYLIZE_SAMPLES, &sampler, rng::derive_seed(EVAL_SEED, "unconditional"))?;
    let fe = lab.extractor().features_batch(&edited)?;
    let fs = lab.extractor().features_batch(&sampled)?;
    let dim = fe[0].len();
    let mut worst: f64 = 0.0;
    for k in 0..dim {
        let a: Vec<f64> = fe.iter().map(|r| r[k]).collect();
        let b: Vec<f64> = fs.iter().map(|r| r[k]).collect();
        let se = (variance(&a) / a.len() as f64 + variance(&b) / b.len() as f64).sqrt();
        let t = if se > 0.0 { (mean(&a) - mean(&b)) / se } else { 0.0 };
        worst = worst.max(t.abs());
    }
    Ok((
        recon_err <= RECONSTRUCTION_TOLERANCE && worst < FEATURE_T_CRITICAL,
        format!("t0=0 max deviation from reconstruction {recon_err:.1e}, t0=1 worst feature |t| {worst:.2} over {dim} features"),
    ))
}

// Determinism

fn tree(root: &Path) -> Res<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root)?.to_path_buf(), std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn cli(args: &[String]) -> Res<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_stylebind")).args(args).output()?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)).into());
    }
    Ok(())
}

fn twice(out: &Path, args: Vec<String>) -> Res<bool> {
    cli(&args)?;
    let first = if out.is_dir() { tree(out)? } else { BTreeMap::from([(PathBuf::new(), std::fs::read(out)?)]) };
    let mut again = args;
    again.push("--force".into());
    cli(&again)?;
    let second = if out.is_dir() { tree(out)? } else { BTreeMap::from([(PathBuf::new(), std::fs::read(out)?)]) };
    Ok(first == second)
}

pub fn c12_determinism(lab: &mut Lab) -> Check {
    let s = |p: &Path| p.to_string_lossy().into_owned();
    let args = |v: &[&str]| v.iter().map(|a| a.to_string()).collect::<Vec<_>>();
    let base = s(&Lab::base_path());
    let work = lab.path("determinism");
    let corpora = work.join("corpora");
    let styleref = s(&corpora.join("pixelation"));
    let aux = s(&corpora.join("realism_analog"));
    let run = work.join("run");
    let samples = work.join("samples");
    let p = |x: &Path| s(x);
    let cases: Vec<(&str, PathBuf, Vec<String>)> = vec![
        ("gen-corpus", corpora.join("pixelation"), args(&["gen-corpus", "--style", "pixelation", "--persons", "3", "--backgrounds", "3", "--seed", "5", "--out", &p(&corpora)])),
        ("gen-corpus aux", corpora.join("realism_analog"), args(&["gen-corpus", "--role", "aux", "--style", "realism_analog", "--n", "3", "--seed", "5", "--out", &p(&corpora)])),
        ("train", run.clone(), args(&["train", "--steps", "4", "--checkpoint-every", "2", "--seed", "3", "--styleref", &styleref, "--aux", &aux, "--init", &base, "--out", &p(&run)])),
        ("train multi", work.join("multi"), args(&["train", "--mode", "multi", "--steps", "4", "--seed", "3", "--styleref", &styleref, "--aux", &aux, "--init", &base, "--out", &p(&work.join("multi"))])),
        ("train dreambooth", work.join("db"), args(&["train", "--mode", "dreambooth", "--steps", "2", "--prior-images", "2", "--seed", "3", "--styleref", &styleref, "--init", &base, "--out", &p(&work.join("db"))])),
        ("sample", samples.clone(), args(&["sample", "--checkpoint", &p(&run.join("model.sfck")), "--prompt-set", "5", "--n", "1", "--steps", "4", "--seed", "2", "--out", &p(&samples)])),
        ("stylize", work.join("stylized"), args(&["stylize", "--checkpoint", &p(&run.join("model.sfck")), "--input", &styleref, "--steps", "4", "--seed", "2", "--out", &p(&work.join("stylized"))])),
        ("evaluate", work.join("eval"), args(&["evaluate", "--generated", &p(&samples), "--reference", &styleref, "--tower", &p(&Lab::tower_path()), "--out", &p(&work.join("eval"))])),
        ("sweep", work.join("sweep"), args(&["sweep", "--run", &p(&run), "--reference", &styleref, "--prompt", STYLEREF_TEMPLATE, "--n", "2", "--steps", "3", "--threads", "2", "--out", &p(&work.join("sweep"))])),
        ("inspect-attn", work.join("attn"), args(&["inspect-attn", "--checkpoint", &p(&run.join("model.sfck")), "--dataset", &styleref, "--out", &p(&work.join("attn"))])),
        ("pretrain", work.join("tower.sfck"), args(&["pretrain", "--what", "tower", "--n", "40", "--steps", "3", "--out", &p(&work.join("tower.sfck"))])),
    ];
    let mut differing = Vec::new();
    for (name, out, a) in cases {
        if !twice(&out, a)? {
            differing.push(name);
        }
    }
    let original = std::fs::read(Lab::base_path())?;
    let w = load_weights(&Lab::base_path())?;
    let copy = work.join("copy.sfck");
    save_weights(&copy, &w)?;
    let once = std::fs::read(&copy)?;
    save_weights(&copy, &load_weights(&copy)?)?;
    let round_trip = once == original && std::fs::read(&copy)? == once;
    Ok((
        differing.is_empty() && round_trip,
        format!(
            "11 command runs repeated, differing: [{}]; checkpoint save/load/save identical: {round_trip}",
            differing.join(", ")
        ),
    ))
}
