//! Subcommand implementations.

use std::path::Path;

use vstain_core::bench::{
    generate_pair, inject_misalignment, load_dataset, load_image_png, run_ablation,
    save_dataset, save_image_png, AblationArm, GenParams,
};
use vstain_core::checkpoint::Checkpoint;
use vstain_core::config::ExperimentConfig;
use vstain_core::domain::Image;
use vstain_core::metrics;
use vstain_core::pipeline::{train_stage_a, Modality};
use vstain_core::rvq::{deserialize_pyramid, serialize_pyramid};
use vstain_core::scoring;
use vstain_core::translator::{train_translator as core_train_translator, TransTrainConfig, TranslatorNet};
use vstain_core::var::{
    infer as core_infer, train_var as core_train_var, SampleStrategy, VarStage, VarTransformer,
    VarTrainConfig,
};
use vstain_core::vqvae::VqVae;

use crate::manifest::Manifest;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let cfg = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text).map_err(CliError::Config)?
        }
    };
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn load_pairs(data: &Path) -> Result<Vec<(Image<f32>, Image<f32>)>> {
    let triples = load_dataset::<f32>(data)
        .map_err(|e| CliError::Config(format!("dataset at {}: {e}", data.display())))?;
    if triples.is_empty() {
        return Err(CliError::Config(format!(
            "dataset at {} is empty",
            data.display()
        )));
    }
    Ok(triples.into_iter().map(|(he, ihc, _)| (he, ihc)).collect())
}

fn load_checkpoint(dir: &Path, name: &str, what: &str) -> Result<Checkpoint> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(CliError::MissingPrerequisite(format!(
            "missing {what} checkpoint: {} (run the earlier stage first)",
            path.display()
        )));
    }
    Checkpoint::load(&path)
        .map_err(|e| CliError::MissingPrerequisite(format!("{what} checkpoint unusable: {e}")))
}

fn rebuild_vqvae(ckpt: &Checkpoint, cfg: &ExperimentConfig) -> Result<VqVae<f32>> {
    let vq_cfg = cfg.vq_config().map_err(CliError::Config)?;
    let mut model = VqVae::<f32>::new(vq_cfg, 0);
    for t in &ckpt.tensors {
        let arr = ckpt
            .tensor_array::<f32>(&t.name)
            .map_err(|e| CliError::MissingPrerequisite(e.to_string()))?;
        if !model.set_tensor(&t.name, arr) {
            return Err(CliError::MissingPrerequisite(format!(
                "checkpoint tensor {} does not fit the configured model (key model.*)",
                t.name
            )));
        }
    }
    Ok(model)
}

fn expect_meta(ckpt: &Checkpoint, key: &str, what: &str) -> Result<String> {
    ckpt.meta.get(key).cloned().ok_or_else(|| {
        CliError::MissingPrerequisite(format!("{what} checkpoint lacks metadata key {key}"))
    })
}

fn check_link(ckpt: &Checkpoint, key: &str, expected: u64, what: &str) -> Result<()> {
    let stored = expect_meta(ckpt, key, what)?;
    let want = format!("{expected:#018x}");
    if stored != want {
        return Err(CliError::MissingPrerequisite(format!(
            "{what} was trained against {key}={stored}, but the present checkpoint hashes to {want}"
        )));
    }
    Ok(())
}

pub fn gen_data(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let params = GenParams {
        n_nuclei: cfg.data.n_nuclei,
        image_size: cfg.data.image_size,
        positivity_rate: cfg.data.positivity_rate,
        texture_scale: cfg.data.texture_scale,
    };
    let total = cfg.data.n_train + cfg.data.n_eval;
    let pairs: Vec<_> = (0..total)
        .map(|i| {
            generate_pair::<f32>(
                cfg.train.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                &params,
            )
        })
        .collect();
    save_dataset(out, &pairs, &params).map_err(CliError::Config)?;
    if cfg.data.misalign_magnitude > 0.0 {
        for (i, pair) in pairs.iter().enumerate() {
            let (warped, _) = inject_misalignment(
                &pair.x_ihc,
                cfg.data.misalign_magnitude,
                cfg.train.seed.wrapping_add(i as u64),
            );
            save_image_png(&warped, &out.join(format!("pair_{i:04}/ihc_misaligned.png")))
                .map_err(CliError::Config)?;
        }
    }
    let manifest = Manifest::new("gen-data", cfg.train.seed, cfg.to_toml());
    manifest.write(out).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "wrote {total} pairs ({} train + {} eval) to {}",
        cfg.data.n_train,
        cfg.data.n_eval,
        out.display()
    );
    Ok(())
}

pub fn train_vqvae(config: Option<&Path>, modality: &str, data: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let modality = match modality {
        "he" => Modality::He,
        "ihc" => Modality::Ihc,
        other => {
            return Err(CliError::Config(format!(
                "--modality must be he or ihc, got {other}"
            )))
        }
    };
    let pairs = load_pairs(data)?;
    let train_split = cfg.data.n_train.min(pairs.len());
    let images: Vec<Image<f32>> = pairs[..train_split]
        .iter()
        .map(|(he, ihc)| match modality {
            Modality::He => he.clone(),
            Modality::Ihc => ihc.clone(),
        })
        .collect();
    let model = train_stage_a(&cfg, &images, modality)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Config(e.to_string()))?;

    let mut ckpt = Checkpoint::from_model("vqvae", &model);
    ckpt.meta.insert("modality".into(), modality.tag().into());
    ckpt.meta.insert("config".into(), cfg.to_toml());
    ckpt.meta.insert(
        "codebook_hash".into(),
        format!("{:#018x}", model.codebook_domain().content_hash()),
    );
    let path = out.join(format!("vq_{}.vsck", modality.tag()));
    ckpt.save(&path)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut manifest = Manifest::new(
        &format!("train-vqvae-{}", modality.tag()),
        cfg.train.seed,
        cfg.to_toml(),
    );
    manifest.output(&format!("vq_{}", modality.tag()), ckpt.content_hash());
    manifest.write(out).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "trained vq_{} on {} images; checkpoint {}",
        modality.tag(),
        images.len(),
        path.display()
    );
    Ok(())
}

pub fn train_translator(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let he_ckpt = load_checkpoint(out, "vq_he.vsck", "VQ (H&E)")?;
    let ihc_ckpt = load_checkpoint(out, "vq_ihc.vsck", "VQ (IHC)")?;
    let vq_he = rebuild_vqvae(&he_ckpt, &cfg)?;
    let vq_ihc = rebuild_vqvae(&ihc_ckpt, &cfg)?;
    let pairs = load_pairs(data)?;
    let train_split = cfg.data.n_train.min(pairs.len());

    let seed = cfg.train.seed.wrapping_add(3000);
    let mut translator = TranslatorNet::<f32>::new(cfg.translator_config(), seed);
    let train_cfg = TransTrainConfig {
        epochs: cfg.train.epochs_translator,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.lr,
        seed,
        lambda_trans: cfg.weights.lambda_trans,
        disable_lsa: false,
        disable_isa: false,
    };
    let report = core_train_translator(
        &mut translator,
        &pairs[..train_split],
        &vq_he,
        &vq_ihc,
        &train_cfg,
    )
    .map_err(|e| CliError::Numeric(e.to_string()))?;

    let mut ckpt = Checkpoint::from_model("translator", &translator);
    ckpt.meta.insert("config".into(), cfg.to_toml());
    ckpt.meta
        .insert("vq_he_hash".into(), format!("{:#018x}", he_ckpt.content_hash()));
    ckpt.meta
        .insert("vq_ihc_hash".into(), format!("{:#018x}", ihc_ckpt.content_hash()));
    let path = out.join("translator.vsck");
    ckpt.save(&path)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut manifest = Manifest::new("train-translator", cfg.train.seed, cfg.to_toml());
    manifest.input("vq_he", he_ckpt.content_hash());
    manifest.input("vq_ihc", ihc_ckpt.content_hash());
    manifest.output("translator", ckpt.content_hash());
    manifest.write(out).map_err(|e| CliError::Config(e.to_string()))?;
    if let (Some(first), Some(last)) = (report.steps.first(), report.steps.last()) {
        println!(
            "translator loss {:.5} -> {:.5} over {} steps; checkpoint {}",
            first.total,
            last.total,
            report.steps.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn train_var(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let he_ckpt = load_checkpoint(out, "vq_he.vsck", "VQ (H&E)")?;
    let ihc_ckpt = load_checkpoint(out, "vq_ihc.vsck", "VQ (IHC)")?;
    let tr_ckpt = load_checkpoint(out, "translator.vsck", "translator")?;
    check_link(&tr_ckpt, "vq_he_hash", he_ckpt.content_hash(), "translator")?;
    check_link(&tr_ckpt, "vq_ihc_hash", ihc_ckpt.content_hash(), "translator")?;
    let vq_he = rebuild_vqvae(&he_ckpt, &cfg)?;
    let vq_ihc = rebuild_vqvae(&ihc_ckpt, &cfg)?;
    let mut translator = TranslatorNet::<f32>::new(cfg.translator_config(), 0);
    tr_ckpt
        .restore(&mut translator)
        .map_err(|e| CliError::MissingPrerequisite(e.to_string()))?;
    let pairs = load_pairs(data)?;
    let train_split = cfg.data.n_train.min(pairs.len());

    let seed = cfg.train.seed.wrapping_add(4000);
    let var_cfg = cfg.var_config().map_err(CliError::Config)?;
    let transformer = VarTransformer::new(var_cfg, seed);
    let mut stage = VarStage::new(transformer, &vq_ihc, cfg.model.disc_base, seed);
    let train_cfg = VarTrainConfig {
        epochs: cfg.train.epochs_var,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.lr,
        seed,
        lambda_1: cfg.weights.lambda_1,
        lambda_2: cfg.weights.lambda_2,
        freeze_decoder: false,
        disable_context: false,
    };
    let report = core_train_var(
        &mut stage,
        &pairs[..train_split],
        &vq_he,
        &vq_ihc,
        &translator,
        &train_cfg,
    )
    .map_err(|e| CliError::Numeric(e.to_string()))?;

    let mut ckpt = Checkpoint::from_model("var_stage", &stage);
    ckpt.meta.insert("config".into(), cfg.to_toml());
    ckpt.meta
        .insert("vq_he_hash".into(), format!("{:#018x}", he_ckpt.content_hash()));
    ckpt.meta
        .insert("vq_ihc_hash".into(), format!("{:#018x}", ihc_ckpt.content_hash()));
    ckpt.meta
        .insert("translator_hash".into(), format!("{:#018x}", tr_ckpt.content_hash()));
    let path = out.join("var.vsck");
    ckpt.save(&path)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut manifest = Manifest::new("train-var", cfg.train.seed, cfg.to_toml());
    manifest.input("vq_he", he_ckpt.content_hash());
    manifest.input("vq_ihc", ihc_ckpt.content_hash());
    manifest.input("translator", tr_ckpt.content_hash());
    manifest.output("var", ckpt.content_hash());
    manifest.write(out).map_err(|e| CliError::Config(e.to_string()))?;
    if let (Some(first), Some(last)) = (report.steps.first(), report.steps.last()) {
        println!(
            "synthesizer loss {:.5} -> {:.5} (ce {:.5} -> {:.5}) over {} steps; checkpoint {}",
            first.total,
            last.total,
            first.ce,
            last.ce,
            report.steps.len(),
            path.display()
        );
    }
    Ok(())
}

fn parse_strategy(text: &str) -> Result<SampleStrategy> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["greedy"] => Ok(SampleStrategy::Greedy),
        ["temp", t] => t
            .parse::<f64>()
            .map(SampleStrategy::Temperature)
            .map_err(|_| CliError::Config(format!("bad temperature in --strategy {text}"))),
        ["topk", k] => k
            .parse::<usize>()
            .map(|k| SampleStrategy::TopK {
                k,
                temperature: 1.0,
            })
            .map_err(|_| CliError::Config(format!("bad k in --strategy {text}"))),
        ["topk", k, t] => {
            let k = k
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad k in --strategy {text}")))?;
            let t = t
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad temperature in --strategy {text}")))?;
            Ok(SampleStrategy::TopK { k, temperature: t })
        }
        _ => Err(CliError::Config(format!(
            "--strategy {text} not one of greedy | temp:<t> | topk:<k>[:<t>]"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn infer(
    config: Option<&Path>,
    checkpoints: &Path,
    input: &Path,
    output: &Path,
    tokens: Option<&Path>,
    strategy: &str,
    seed: u64,
) -> Result<()> {
    let cfg = load_config(config)?;
    let strategy = parse_strategy(strategy)?;
    let he_ckpt = load_checkpoint(checkpoints, "vq_he.vsck", "VQ (H&E)")?;
    let ihc_ckpt = load_checkpoint(checkpoints, "vq_ihc.vsck", "VQ (IHC)")?;
    let tr_ckpt = load_checkpoint(checkpoints, "translator.vsck", "translator")?;
    let var_ckpt = load_checkpoint(checkpoints, "var.vsck", "synthesizer")?;
    check_link(&tr_ckpt, "vq_he_hash", he_ckpt.content_hash(), "translator")?;
    check_link(&tr_ckpt, "vq_ihc_hash", ihc_ckpt.content_hash(), "translator")?;
    check_link(&var_ckpt, "vq_he_hash", he_ckpt.content_hash(), "synthesizer")?;
    check_link(&var_ckpt, "vq_ihc_hash", ihc_ckpt.content_hash(), "synthesizer")?;
    check_link(&var_ckpt, "translator_hash", tr_ckpt.content_hash(), "synthesizer")?;

    let vq_he = rebuild_vqvae(&he_ckpt, &cfg)?;
    let vq_ihc = rebuild_vqvae(&ihc_ckpt, &cfg)?;
    let mut translator = TranslatorNet::<f32>::new(cfg.translator_config(), 0);
    tr_ckpt
        .restore(&mut translator)
        .map_err(|e| CliError::MissingPrerequisite(e.to_string()))?;
    let var_cfg = cfg.var_config().map_err(CliError::Config)?;
    let mut stage = VarStage::new(VarTransformer::new(var_cfg, 0), &vq_ihc, cfg.model.disc_base, 0);
    var_ckpt
        .restore(&mut stage)
        .map_err(|e| CliError::MissingPrerequisite(e.to_string()))?;

    let he = load_image_png::<f32>(input).map_err(CliError::Config)?;
    let out = core_infer(&he, &vq_he, &translator, &vq_ihc, &stage, strategy, seed)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Config(e.to_string()))?;
        }
    }
    save_image_png(&out.image, output).map_err(CliError::Config)?;
    if let Some(tok_path) = tokens {
        let bytes = serialize_pyramid(&out.pyramid)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        std::fs::write(tok_path, bytes).map_err(|e| CliError::Config(e.to_string()))?;
    }
    println!("wrote {}", output.display());
    Ok(())
}

pub fn score(config: Option<&Path>, input: &Path, output: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    cfg.scoring
        .validate()
        .map_err(|e| CliError::Config(format!("scoring thresholds: {e}")))?;
    let file = std::fs::File::open(input)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?;
    let rows = scoring::read_patch_rows(file).map_err(|e| CliError::Config(e.to_string()))?;
    let mut scored = Vec::with_capacity(rows.len());
    for row in &rows {
        scored.push(
            scoring::score_row(row).map_err(|e| {
                CliError::Numeric(format!("patch {}: {e}", row.patch_id))
            })?,
        );
    }
    let out_file = std::fs::File::create(output)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", output.display())))?;
    scoring::write_score_report(out_file, &scored)
        .map_err(|e| CliError::Config(e.to_string()))?;

    // Agreement summaries against ground-truth columns when present.
    let gt_h: Vec<(f64, f64)> = rows
        .iter()
        .zip(&scored)
        .filter_map(|(r, s)| r.gt_h_score.map(|g| (s.h_score, g)))
        .collect();
    if gt_h.len() >= 2 {
        let pred: Vec<f64> = gt_h.iter().map(|&(p, _)| p).collect();
        let gt: Vec<f64> = gt_h.iter().map(|&(_, g)| g).collect();
        match scoring::agreement_metrics(&pred, &gt) {
            Ok(m) => println!(
                "h-score agreement: r2 {:.4} spearman {:.4} pearson {:.4} mse {:.4}",
                m.r2, m.spearman, m.pearson, m.mse
            ),
            Err(e) => println!("h-score agreement unavailable: {e}"),
        }
    }
    println!("scored {} patches -> {}", scored.len(), output.display());
    Ok(())
}

pub fn eval(pred: &Path, gt: &Path, output: &Path) -> Result<()> {
    let list = |dir: &Path| -> Result<Vec<std::path::PathBuf>> {
        let mut v: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        v.sort();
        Ok(v)
    };
    let preds = list(pred)?;
    if preds.is_empty() {
        return Err(CliError::Config(format!(
            "no .png files under {}",
            pred.display()
        )));
    }
    let fmt = |v: f64| {
        if v.is_infinite() {
            "inf".to_string()
        } else {
            format!("{v:.6}")
        }
    };
    let mut csv = String::from("name,psnr,ssim,perceptual_proxy\n");
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for p in &preds {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        let gt_path = gt.join(&name);
        if !gt_path.exists() {
            return Err(CliError::Config(format!(
                "no matching ground truth for {name} under {}",
                gt.display()
            )));
        }
        let a = load_image_png::<f32>(p).map_err(CliError::Config)?;
        let b = load_image_png::<f32>(&gt_path).map_err(CliError::Config)?;
        let psnr = metrics::psnr(&a, &b).map_err(|e| CliError::Numeric(e.to_string()))?;
        let ssim = metrics::ssim(&a, &b).map_err(|e| CliError::Numeric(e.to_string()))?;
        let proxy =
            metrics::perceptual_proxy(&a, &b).map_err(|e| CliError::Numeric(e.to_string()))?;
        csv.push_str(&format!("{name},{},{},{}\n", fmt(psnr), fmt(ssim), fmt(proxy)));
        psnrs.push(psnr);
        ssims.push(ssim);
    }
    std::fs::write(output, &csv).map_err(|e| CliError::Config(e.to_string()))?;
    let finite: Vec<f64> = psnrs.iter().copied().filter(|v| v.is_finite()).collect();
    let median_txt = if finite.is_empty() {
        "inf".to_string()
    } else {
        format!("{:.3}", vstain_core::pipeline::median(&psnrs.iter().map(|&v| if v.is_finite() { v } else { 1e9 }).collect::<Vec<_>>()))
    };
    println!(
        "evaluated {} pairs; median PSNR {} dB; report {}",
        preds.len(),
        median_txt,
        output.display()
    );
    Ok(())
}

pub fn ablate(config: Option<&Path>, out: &Path, seeds: &str, arms: &str) -> Result<()> {
    let cfg = load_config(config)?;
    let seeds: Vec<u64> = seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("bad seed {s} in --seeds")))
        })
        .collect::<Result<_>>()?;
    let arm_list: Vec<AblationArm> = match arms {
        "all" => AblationArm::all(),
        "core" => vec![
            AblationArm::Full,
            AblationArm::WithoutVar,
            AblationArm::WithoutLsa,
            AblationArm::WithoutIsa,
            AblationArm::WithoutMultiScale,
            AblationArm::WithoutRegistration,
        ],
        list => {
            let all = AblationArm::all();
            list.split(',')
                .map(|name| {
                    all.iter()
                        .copied()
                        .find(|a| a.name() == name.trim())
                        .ok_or_else(|| CliError::Config(format!("unknown arm {name}")))
                })
                .collect::<Result<_>>()?
        }
    };
    let report = run_ablation(&cfg, &seeds, &arm_list)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(out.join("ablation.csv"), report.to_csv())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = Manifest::new("ablate", cfg.train.seed, cfg.to_toml());
    manifest.write(out).map_err(|e| CliError::Config(e.to_string()))?;
    for arm in &arm_list {
        if let Some(m) = report.median_psnr(arm.name()) {
            println!("{:<28} median PSNR {m:.3} dB", arm.name());
        }
    }
    println!("report: {}", out.join("ablation.csv").display());
    Ok(())
}

pub fn inspect_tokens(input: &Path) -> Result<()> {
    let bytes = std::fs::read(input)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?;
    let pyramid = deserialize_pyramid(&bytes).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "scales: {}   codebook hash: {:#018x}",
        pyramid.num_scales(),
        pyramid.codebook_hash()
    );
    for (k, grid) in pyramid.indices().iter().enumerate() {
        let (h, w) = grid.dim();
        println!("scale {k}: {h}x{w}");
        for y in 0..h {
            let row: Vec<String> = (0..w).map(|x| format!("{:>5}", grid[[y, x]])).collect();
            println!("  {}", row.join(" "));
        }
    }
    Ok(())
}
